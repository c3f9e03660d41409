#pragma once
// "HVT1" named-tensor container.
//
// Layout (all integers little-endian):
//   magic "HVT1" | u32 entry count | per entry:
//     u16 name length | UTF-8 name | u8 rank | u32 extent * rank | f64 payload

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/tensor.hpp"

namespace hiervid::hvt1 {

class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;

    bool operator==(const Entry&) const = default;
};

std::vector<std::uint8_t> encode(const std::vector<Entry>& entries);
std::vector<Entry> decode(const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, const std::vector<Entry>& entries);
std::vector<Entry> read_file(const std::filesystem::path& path);

/// Indexes a container once, then reads single entries by seeking.
class Reader {
  public:
    explicit Reader(std::filesystem::path path);

    const std::filesystem::path& path() const { return path_; }
    std::vector<std::string> names() const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Shape shape(const std::string& name) const;
    Entry read(const std::string& name) const;

  private:
    struct Location {
        Shape shape;
        std::uint64_t offset;
    };
    std::filesystem::path path_;
    std::vector<std::string> order_;
    std::map<std::string, Location> index_;
};

}  // namespace hiervid::hvt1
