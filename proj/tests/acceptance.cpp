// Acceptance runner: one PASS/FAIL line per criterion.
//
// Usage: hiervid_acceptance [--work DIR] [--only 1,2,...] [--seeds N] [--reuse]
// Corpora and training runs live under DIR (default ./acceptance_work). With
// --reuse, a finished run whose sidecar digest matches its config is kept.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiervid/config.hpp"
#include "hiervid/eval.hpp"
#include "hiervid/hvt1.hpp"
#include "hiervid/trainer.hpp"
#include "oracles/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hiervid;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(HIERVID_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---------------------------------------------------------------------------
// Shared experiment state for the directional criteria

enum class Variant { full, baseline, random_both, random_boxes, bce_added, bce_replaces };

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::baseline: return "baseline";
        case Variant::random_both: return "random_both";
        case Variant::random_boxes: return "random_boxes";
        case Variant::bce_added: return "bce_added";
        case Variant::bce_replaces: return "bce_replaces";
    }
    return "?";
}

class Lab {
  public:
    Lab(fs::path work, std::size_t seeds, bool reuse) : work_(std::move(work)), seeds_(seeds), reuse_(reuse) {
        fs::create_directories(work_);
    }

    std::size_t seeds() const { return seeds_; }
    const fs::path& work() const { return work_; }

    /// The default corpus (500 videos) and a disjoint held-out corpus.
    void ensure_corpora() {
        if (train_corpus_) return;
        generate("train", HIERVID_CONFIGS "/generate.json");
        generate("heldout", HIERVID_CONFIGS "/generate_heldout.json");
        train_corpus_ = std::make_shared<const Corpus>(Corpus::load(work_ / "data/train/manifest.jsonl"));
        heldout_ = std::make_unique<Corpus>(Corpus::load(work_ / "data/heldout/manifest.jsonl"));
    }

    TrainConfig config(Variant v, std::uint64_t seed) const {
        TrainConfig c;
        c.corpus = (work_ / "data/train/manifest.jsonl").string();
        c.seed = seed;
        switch (v) {
            case Variant::full: break;
            case Variant::baseline: c.weights.omega = 0.0; break;
            case Variant::random_both: c.ablation = Ablation::random_both; break;
            case Variant::random_boxes: c.ablation = Ablation::random_boxes; break;
            case Variant::bce_added: c.ablation = Ablation::bce_added; break;
            case Variant::bce_replaces: c.ablation = Ablation::bce_replaces_object; break;
        }
        c.out_dir = (work_ / "runs" / (std::string(variant_name(v)) + "_s" + std::to_string(seed))).string();
        return c;
    }

    /// Trains (or reuses) a variant and returns its frozen final parameters.
    const ModelParams& model(Variant v, std::uint64_t seed) {
        const auto key = std::make_pair(static_cast<int>(v), seed);
        if (auto it = models_.find(key); it != models_.end()) return it->second;
        ensure_corpora();
        const TrainConfig c = config(v, seed);
        const fs::path ckpt = fs::path(c.out_dir) / ("ckpt_" + std::to_string(c.total_steps) + ".hvt");
        if (!(reuse_ && fs::exists(ckpt) && load_checkpoint(ckpt).meta.config_digest == Trainer(c, train_corpus_).config_digest())) {
            const auto t0 = Clock::now();
            const RunReport r = train(c, train_corpus_);
            std::printf("  trained %-12s seed %llu: %.0f s, final total %.4f\n", variant_name(v),
                        static_cast<unsigned long long>(seed), seconds_since(t0), r.final_step.total);
            std::fflush(stdout);
        }
        return models_.emplace(key, load_checkpoint(ckpt).params.frozen()).first->second;
    }

    ModelParams initial(std::uint64_t seed) const { return ModelParams::init(config(Variant::full, seed).model, seed).frozen(); }

    NNResult nn(const ModelParams& p) const {
        NNEvalOptions o;  // 50 batches of 8 held-out videos
        return nn_class_match_fraction(p, *heldout_, o);
    }

    /// Category-task probe; the labeled stills depend only on the seed.
    double probe(Variant v, std::uint64_t seed) {
        const auto key = std::make_pair(static_cast<int>(v), seed);
        if (auto it = probes_.find(key); it != probes_.end()) return it->second;
        const ModelParams& p = model(v, seed);
        ProbeOptions o = probe_options(seed);
        auto d = probe_data_.find(seed);
        if (d == probe_data_.end()) d = probe_data_.emplace(seed, make_probe_task(ProbeTask::category, o)).first;
        const double acc = linear_probe_transfer(p, d->second, o).test_accuracy;
        std::printf("  probe %-12s seed %llu: %.4f\n", variant_name(v), static_cast<unsigned long long>(seed), acc);
        std::fflush(stdout);
        return probes_[key] = acc;
    }

    static ProbeOptions probe_options(std::uint64_t seed) {
        ProbeOptions o;
        o.seed = seed;
        return o;
    }

  private:
    void generate(const std::string& name, const std::string& config) {
        const fs::path out = work_ / "data" / name;
        if (fs::exists(out / "manifest.jsonl") && fs::exists(out / "generate_config.json")) {
            const json want = to_json(generate_config_from_json(read_json_file(config)));
            if (read_json_file(out / "generate_config.json") == want) return;
        }
        fs::remove_all(out);
        const auto t0 = Clock::now();
        const int rc = run_cli("generate --config " + config + " --out " + out.string(), work_ / ("generate_" + name + ".log"));
        if (rc != 0) throw std::runtime_error("generate " + name + " failed; see " + (work_ / ("generate_" + name + ".log")).string());
        std::printf("  generated %s corpus in %.0f s\n", name.c_str(), seconds_since(t0));
    }

    fs::path work_;
    std::size_t seeds_;
    bool reuse_;
    std::shared_ptr<const Corpus> train_corpus_;
    std::unique_ptr<Corpus> heldout_;
    std::map<std::pair<int, std::uint64_t>, ModelParams> models_;
    std::map<std::pair<int, std::uint64_t>, double> probes_;
    std::map<std::uint64_t, ProbeTaskData> probe_data_;
};

// ---------------------------------------------------------------------------
// Criteria

Outcome gradient_correctness(Lab& lab) {
    const auto t0 = Clock::now();
    const int rc = run_cli("gradcheck", lab.work() / "gradcheck.log");
    const double secs = seconds_since(t0);
    std::ifstream in(lab.work() / "gradcheck.log");
    std::string line, summary;
    while (std::getline(in, line))
        if (line.rfind("gradcheck:", 0) == 0) summary = line;
    return {rc == 0 && secs < 120.0, summary + ", " + fmt("%.1f s", secs)};
}

Outcome mining_oracle(Lab&) {
    const auto t0 = Clock::now();
    const auto r = selfcheck::check_mining_pools(200, 7);
    const double secs = seconds_since(t0);
    return {r.pools == 200 && r.selection_mismatches == 0 && r.max_loss_diff < 1e-10 && secs < 60.0,
            std::to_string(r.pools) + " pools, " + std::to_string(r.selection_mismatches) +
                " selection mismatches, max loss diff " + fmt("%.2e", r.max_loss_diff) + ", " + fmt("%.2f s", secs)};
}

Outcome infonce_algebra(Lab&) {
    const auto r = selfcheck::check_infonce_algebra(1000, 7);
    return {r.batches == 1000 && r.max_uniform_abs == 0.0 && r.min_margin_over_bound >= 0.0 && r.max_shift_diff <= 1e-9,
            "uniform |L| max " + fmt("%.1e", r.max_uniform_abs) + ", min (L + ln N) " + fmt("%.2e", r.min_margin_over_bound) +
                ", shift diff " + fmt("%.2e", r.max_shift_diff)};
}

Outcome nn_ordering(Lab& lab) {
    lab.ensure_corpora();
    std::ostringstream d;
    bool increases = true;
    std::size_t wins = 0;
    double wall = 0.0;
    for (std::uint64_t s = 0; s < lab.seeds(); ++s) {
        const auto t0 = Clock::now();
        const NNResult init = lab.nn(lab.initial(s));
        const ModelParams& full = lab.model(Variant::full, s);
        const ModelParams& base = lab.model(Variant::baseline, s);
        const NNResult nf = lab.nn(full), nb = lab.nn(base);
        wall += seconds_since(t0);  // training included unless reused
        const Table2x2 t{{{static_cast<std::int64_t>(nf.matches), static_cast<std::int64_t>(nf.boxes - nf.matches)},
                          {static_cast<std::int64_t>(nb.matches), static_cast<std::int64_t>(nb.boxes - nb.matches)}}};
        const double p = fisher_exact_2x2(t);
        increases = increases && nf.fraction > init.fraction && nb.fraction > init.fraction;
        const bool win = nf.fraction - nb.fraction >= 0.05 && p < 0.05;
        wins += win;
        d << "s" << s << ": init " << fmt("%.3f", init.fraction) << " full " << fmt("%.3f", nf.fraction) << " base "
          << fmt("%.3f", nb.fraction) << " p=" << fmt("%.1e", p) << "; ";
    }
    const bool fast = wall < 1800.0;
    d << "(a) " << (increases ? "yes" : "no") << ", (b) " << wins << "/" << lab.seeds() << ", " << fmt("%.0f s", wall);
    return {increases && wins * 3 >= 2 * lab.seeds() && fast, d.str()};
}

Outcome ablation_ordering(Lab& lab) {
    std::ostringstream d;
    std::size_t ok = 0;
    for (std::uint64_t s = 0; s < lab.seeds(); ++s) {
        const double base = lab.probe(Variant::baseline, s), both = lab.probe(Variant::random_both, s);
        const double boxes = lab.probe(Variant::random_boxes, s), full = lab.probe(Variant::full, s);
        const bool good = both <= base + 0.01 && boxes >= base && full >= boxes;
        ok += good;
        d << "s" << s << ": both " << fmt("%.3f", both) << " base " << fmt("%.3f", base) << " boxes " << fmt("%.3f", boxes)
          << " full " << fmt("%.3f", full) << (good ? " ok" : " x") << "; ";
    }
    d << ok << "/" << lab.seeds();
    return {ok * 3 >= 2 * lab.seeds(), d.str()};
}

Outcome bce_ordering(Lab& lab) {
    std::ostringstream d;
    bool within = true;
    std::size_t below = 0;
    for (std::uint64_t s = 0; s < lab.seeds(); ++s) {
        const double full = lab.probe(Variant::full, s), added = lab.probe(Variant::bce_added, s);
        const double replaces = lab.probe(Variant::bce_replaces, s);
        within = within && added >= full - 0.01;
        below += replaces < added;
        d << "s" << s << ": full " << fmt("%.3f", full) << " added " << fmt("%.3f", added) << " replaces "
          << fmt("%.3f", replaces) << "; ";
    }
    d << "added within 1pt: " << (within ? "yes" : "no") << ", replaces below added " << below << "/" << lab.seeds();
    return {within && below * 3 >= 2 * lab.seeds(), d.str()};
}

Outcome robustness_ordering(Lab& lab) {
    std::vector<Perturbation> middle;
    for (auto k : {PerturbKind::gaussian_noise, PerturbKind::box_blur, PerturbKind::channel_shift})
        middle.push_back({k, perturb_levels(k)[1]});
    std::vector<double> df(middle.size(), 0.0), db(middle.size(), 0.0);
    for (std::uint64_t s = 0; s < lab.seeds(); ++s) {
        const ProbeOptions o = Lab::probe_options(s);
        const auto rf = robustness_delta(lab.model(Variant::full, s), ProbeTask::category, middle, o);
        const auto rb = robustness_delta(lab.model(Variant::baseline, s), ProbeTask::category, middle, o);
        for (std::size_t k = 0; k < middle.size(); ++k) {
            df[k] += rf[k].delta / static_cast<double>(lab.seeds());
            db[k] += rb[k].delta / static_cast<double>(lab.seeds());
        }
    }
    std::ostringstream d;
    std::size_t better = 0;
    for (std::size_t k = 0; k < middle.size(); ++k) {
        better += df[k] <= db[k];
        d << perturb_name(middle[k].kind) << "@" << middle[k].level << ": full " << fmt("%+.3f", df[k]) << " base "
          << fmt("%+.3f", db[k]) << "; ";
    }
    d << better << "/3 kinds";
    return {better >= 2, d.str()};
}

Outcome fisher_oracle(Lab&) {
    const auto r = selfcheck::check_fisher_tables(40);
    return {r.tables > 0 && r.out_of_range == 0 && r.max_diff < 1e-9,
            std::to_string(r.tables) + " tables, max diff " + fmt("%.2e", r.max_diff) + ", " +
                std::to_string(r.out_of_range) + " outside (0, 1]"};
}

Outcome determinism(Lab& lab) {
    lab.ensure_corpora();
    const fs::path dir = lab.work() / "determinism";
    fs::remove_all(dir);
    auto cfg = [&](const std::string& name, std::size_t threads) {
        TrainConfig c = lab.config(Variant::full, 3);
        c.total_steps = 20;
        c.optimizer.decay_steps = {10, 15};
        c.threads = threads;
        c.out_dir = (dir / name).string();
        return c;
    };
    auto corpus = std::make_shared<const Corpus>(Corpus::load(lab.work() / "data/train/manifest.jsonl"));
    const RunReport a = train(cfg("a", 1), corpus), b = train(cfg("b", 1), corpus), c = train(cfg("c", 4), corpus);
    const bool same = a.checkpoint_digest == b.checkpoint_digest && a.checkpoint_digest == c.checkpoint_digest;

    // Checkpoint: decode then re-encode, and the parameters through the model.
    const auto bytes = read_bytes(a.checkpoint);
    const auto entries = hvt1::read_file(a.checkpoint);
    hvt1::write_file(dir / "copy.hvt", entries);
    const auto loaded = load_checkpoint(a.checkpoint);
    auto rebuilt = loaded.params.to_entries();
    rebuilt.insert(rebuilt.end(), loaded.velocity.begin(), loaded.velocity.end());
    bool ckpt_ok = read_bytes(dir / "copy.hvt") == bytes && hvt1::encode(rebuilt) == std::vector<std::uint8_t>(bytes.begin(), bytes.end());

    // Corpus: load a generated corpus and write it back.
    const fs::path src = dir / "corpus", dst = dir / "corpus_copy";
    bool corpus_ok = run_cli(std::string("generate --config ") + HIERVID_CONFIGS + "/generate.json --videos 20 --out " + src.string(),
                             dir / "generate.log") == 0;
    if (corpus_ok) {
        const Corpus loaded_corpus = Corpus::load(src / "manifest.jsonl");
        std::vector<AnnotatedVideo> videos;
        for (std::size_t i = 0; i < loaded_corpus.size(); ++i) videos.push_back(loaded_corpus.video(i));
        write_corpus(dst, videos);
        for (const auto& e : fs::directory_iterator(src)) {
            if (e.path().filename() == "generate_config.json") continue;
            corpus_ok = corpus_ok && read_bytes(e.path()) == read_bytes(dst / e.path().filename());
        }
    }
    std::ostringstream d;
    d << "digests " << a.checkpoint_digest << "/" << b.checkpoint_digest << "/" << c.checkpoint_digest
      << " (threads 1,1,4); checkpoint round-trip " << (ckpt_ok ? "exact" : "differs") << "; corpus round-trip "
      << (corpus_ok ? "exact" : "differs");
    return {same && ckpt_ok && corpus_ok, d.str()};
}

Outcome sweep_tooling(Lab& lab) {
    lab.ensure_corpora();
    const fs::path dir = lab.work() / "sweep";
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainConfig c = lab.config(Variant::full, 0);
    c.total_steps = 30;
    c.optimizer.decay_steps = {20};
    {
        std::ofstream f(dir / "train.json");
        f << to_json(c).dump(2);
    }
    EvalConfig e;
    e.corpus = (lab.work() / "data/heldout/manifest.jsonl").string();
    e.nn.batches = 10;
    e.probe.n_train = 300;
    e.probe.n_val = 60;
    e.probe.n_test = 300;
    e.tasks = {ProbeTask::category};
    {
        std::ofstream f(dir / "eval.json");
        f << to_json(e).dump(2);
    }
    const int rc = run_cli("sweep --config " + (dir / "train.json").string() + " --eval-config " + (dir / "eval.json").string() +
                               " --param omega --values 0.5,1,5,10,50 --out " + (dir / "out").string(),
                           dir / "sweep.log");
    if (rc != 0) return {false, "sweep exited with " + std::to_string(rc)};

    std::ifstream rj(dir / "out" / "report.json");
    const json report = json::parse(rj);
    const auto& points = report.at("values").at("points");
    std::set<double> xs;
    for (const auto& p : points) xs.insert(p.at("value").get<double>());
    const bool five = points.size() == 5 && xs == std::set<double>{0.5, 1, 5, 10, 50};

    std::ifstream sf(dir / "out" / "chart_sweep_omega.svg");
    const std::string svg{std::istreambuf_iterator<char>(sf), std::istreambuf_iterator<char>()};
    std::size_t circles = 0;
    for (std::size_t pos = 0; (pos = svg.find("<circle", pos)) != std::string::npos; ++pos) ++circles;
    const bool svg_ok = svg.rfind("<svg", 0) == 0 && svg.find("</svg>") != std::string::npos &&
                        std::count(svg.begin(), svg.end(), '<') == std::count(svg.begin(), svg.end(), '>') &&
                        circles == 5 * report.at("charts").at(0).at("series").size();

    std::ifstream cf(dir / "out" / "report.csv");
    std::string header, row;
    std::getline(cf, header);
    std::size_t rows = 0, well_formed = 0, probe_rows = 0;
    while (std::getline(cf, row)) {
        ++rows;
        well_formed += std::count(row.begin(), row.end(), ',') == 1 || row.find('"') != std::string::npos;
        probe_rows += row.find(".probe_accuracy,") != std::string::npos;
    }
    const bool csv_ok = header == "metric,value" && rows > 0 && rows == well_formed && probe_rows == 5;
    std::ostringstream d;
    d << points.size() << " points, svg " << (svg_ok ? "valid" : "invalid") << " (" << circles << " markers), csv "
      << (csv_ok ? "valid" : "invalid") << " (" << rows << " rows)";
    return {five && svg_ok && csv_ok, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = "acceptance_work";
    std::set<int> only;
    std::size_t seeds = 3;
    bool reuse = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) {
            work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
        } else if (a == "--seeds" && i + 1 < argc) {
            seeds = std::stoul(argv[++i]);
        } else if (a == "--reuse") {
            reuse = true;
        } else {
            std::cerr << "usage: hiervid_acceptance [--work DIR] [--only 1,2,...] [--seeds N] [--reuse]\n";
            return 1;
        }
    }

    Lab lab(work, seeds, reuse);
    const std::vector<std::pair<const char*, std::function<Outcome(Lab&)>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"mining oracle equivalence", mining_oracle},
        {"InfoNCE algebra", infonce_algebra},
        {"NN category match ordering", nn_ordering},
        {"ablation probe ordering", ablation_ordering},
        {"BCE head ablation", bce_ordering},
        {"robustness ordering", robustness_ordering},
        {"Fisher exact vs enumeration", fisher_oracle},
        {"determinism and persistence", determinism},
        {"sensitivity sweep tooling", sweep_tooling},
    };
    std::vector<std::string> lines;
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        std::printf("criterion %d: %s\n", id, criteria[i].first);
        std::fflush(stdout);
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = criteria[i].second(lab);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " " + std::to_string(id) + " " + criteria[i].first +
                                 ": " + o.detail + " [" + fmt("%.0f s", seconds_since(t0)) + "]";
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        lines.push_back(line);
        all = all && o.pass;
    }
    std::printf("\nsummary\n");
    for (const auto& l : lines) std::printf("%s\n", l.c_str());
    return all ? 0 : 1;
}
