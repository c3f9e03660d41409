#include "hiervid/hvt1.hpp"

#include <bit>
#include <fstream>
#include <iterator>

namespace hiervid::hvt1 {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'T', '1'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Cursor {
  public:
    Cursor(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    template <class T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == size_; }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw FormatError("HVT1: truncated container");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

struct Header {
    std::string name;
    Shape shape;
};

Header read_header(Cursor& c) {
    Header h;
    const auto len = c.le<std::uint16_t>();
    h.name = c.bytes(len);
    const auto rank = c.le<std::uint8_t>();
    for (std::uint8_t r = 0; r < rank; ++r) h.shape.push_back(c.le<std::uint32_t>());
    return h;
}

void check_magic(Cursor& c) {
    if (c.bytes(4) != std::string(kMagic, 4)) throw FormatError("HVT1: bad magic");
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode(const std::vector<Entry>& entries) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > 0xFFFF) throw FormatError("HVT1: name too long: " + e.name.substr(0, 32));
        if (e.shape.size() > 0xFF) throw FormatError("HVT1: rank too large for " + e.name);
        if (shape_numel(e.shape) != e.values.size())
            throw FormatError("HVT1: payload of " + e.name + " does not match its shape");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
        for (auto x : e.shape) {
            if (x > 0xFFFFFFFFull) throw FormatError("HVT1: extent too large for " + e.name);
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(x));
        }
        for (double v : e.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

std::vector<Entry> decode(const std::vector<std::uint8_t>& bytes) {
    Cursor c(bytes.data(), bytes.size());
    check_magic(c);
    const auto count = c.le<std::uint32_t>();
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto h = read_header(c);
        Entry e{std::move(h.name), std::move(h.shape), {}};
        const auto n = shape_numel(e.shape);
        e.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<double>(c.le<std::uint64_t>());
        entries.push_back(std::move(e));
    }
    if (!c.done()) throw FormatError("HVT1: trailing bytes after last entry");
    return entries;
}

void write_file(const std::filesystem::path& path, const std::vector<Entry>& entries) {
    const auto bytes = encode(entries);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Entry> read_file(const std::filesystem::path& path) { return decode(slurp(path)); }

Reader::Reader(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path_.string());
    // Headers are small; read them incrementally without loading payloads.
    auto read_exact = [&](std::size_t n) {
        std::vector<std::uint8_t> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("HVT1: truncated container " + path_.string());
        return buf;
    };
    auto le32 = [](const std::vector<std::uint8_t>& b, std::size_t at) {
        return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
               (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
    };
    auto head = read_exact(8);
    if (std::string(head.begin(), head.begin() + 4) != std::string(kMagic, 4))
        throw FormatError("HVT1: bad magic in " + path_.string());
    const auto count = le32(head, 4);
    std::uint64_t offset = 8;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto lb = read_exact(2);
        const std::size_t len = lb[0] | (lb[1] << 8);
        auto nb = read_exact(len + 1);
        std::string name(nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(len));
        const std::size_t rank = nb[len];
        auto eb = read_exact(4 * rank);
        Shape shape;
        for (std::size_t r = 0; r < rank; ++r) shape.push_back(le32(eb, 4 * r));
        offset += 2 + len + 1 + 4 * rank;
        const std::uint64_t payload = 8ull * shape_numel(shape);
        order_.push_back(name);
        index_[name] = Location{shape, offset};
        offset += payload;
        in.seekg(static_cast<std::streamoff>(offset));
        if (!in) throw FormatError("HVT1: truncated container " + path_.string());
    }
}

std::vector<std::string> Reader::names() const { return order_; }

Shape Reader::shape(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("HVT1: no entry '" + name + "' in " + path_.string());
    return it->second.shape;
}

Entry Reader::read(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("HVT1: no entry '" + name + "' in " + path_.string());
    const auto n = shape_numel(it->second.shape);
    std::ifstream in(path_, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(it->second.offset));
    std::vector<std::uint8_t> raw(8 * n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw FormatError("HVT1: truncated payload for " + name);
    Cursor c(raw.data(), raw.size());
    Entry e{name, it->second.shape, std::vector<double>(n)};
    for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<double>(c.le<std::uint64_t>());
    return e;
}

}  // namespace hiervid::hvt1
