// hiervid: corpus generation, training, evaluation and self-checks.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiervid/config.hpp"
#include "hiervid/eval.hpp"
#include "hiervid/hierarchy.hpp"
#include "hiervid/kernels.hpp"
#include "hiervid/parallel.hpp"
#include "hiervid/report.hpp"
#include "hiervid/synth.hpp"
#include "hiervid/trainer.hpp"
#include "oracles/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hiervid;

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool needs_config, bool needs_out) {
    auto* c = cmd->add_option("--config", f.config, "JSON config file");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    auto* o = cmd->add_option("--out", f.out, "output directory");
    if (needs_out) o->required();
    cmd->add_option("--seed", f.seed, "root seed (overrides the config)");
    cmd->add_option("--threads", f.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

EvalConfig load_eval_config(const CommonFlags& f) {
    EvalConfig c = f.config.empty() ? EvalConfig{} : eval_config_from_json(read_json_file(f.config));
    if (f.seed) c.seed = *f.seed;
    if (f.threads) c.threads = *f.threads;
    c.nn.seed = c.seed;
    c.nn.threads = c.threads;
    c.probe.seed = c.seed;
    c.probe.threads = c.threads;
    return c;
}

struct NamedModel {
    std::string name;
    std::size_t step = 0;
    std::string digest;
    ModelParams params;
};

std::vector<NamedModel> load_models(const std::vector<std::string>& paths) {
    std::vector<NamedModel> out;
    for (const auto& p : paths) {
        auto ck = load_checkpoint(p);
        out.push_back({fs::path(p).string(), ck.meta.step, checkpoint_digest(p), ck.params.frozen()});
    }
    return out;
}

json model_json(const NamedModel& m) { return {{"checkpoint", m.name}, {"step", m.step}, {"digest", m.digest}}; }

Chart bar_chart(std::string id, std::string title, std::string y_label, std::vector<std::string> categories) {
    Chart c;
    c.id = std::move(id);
    c.title = std::move(title);
    c.x_label = "checkpoint";
    c.y_label = std::move(y_label);
    c.kind = Chart::Kind::bar;
    c.categories = std::move(categories);
    return c;
}

void finish(const Metrics& m, const fs::path& out, const json& echoed) {
    write_json(out / "config.json", echoed);
    for (const auto& p : emit_report(m, out)) std::cout << "wrote " << p.string() << '\n';
}

// ---------------------------------------------------------------------------

int cmd_generate(const CommonFlags& f, const std::optional<std::size_t>& videos) {
    GenerateConfig c = generate_config_from_json(read_json_file(f.config));
    if (f.seed) c.seed = *f.seed;
    if (videos) c.videos = *videos;
    const std::size_t threads = f.threads.value_or(1);
    auto corpus = generate_corpus(c.scene, c.videos, c.seed, c.id_prefix, threads);
    if (c.apply_detector) {
        parallel_for(corpus.size(), threads, [&](std::size_t i) {
            Rng rng = make_rng(c.seed, "detector", i);
            corpus[i] = simulate_detector(corpus[i], c.noise, c.scene.num_categories, rng);
        });
    }
    write_corpus(f.out, corpus);
    write_json(fs::path(f.out) / "generate_config.json", to_json(c));
    std::cout << "wrote " << corpus.size() << " videos to " << f.out << '\n';
    return 0;
}

int cmd_annotate(const CommonFlags& f, const std::string& input) {
    GenerateConfig c = f.config.empty() ? GenerateConfig{} : generate_config_from_json(read_json_file(f.config));
    if (f.seed) c.seed = *f.seed;
    const std::size_t threads = f.threads.value_or(1);
    // Ground-truth input: keep every box so the detector sees the full scene.
    CorpusOptions opts;
    opts.score_threshold = 0.0;
    opts.max_boxes = std::numeric_limits<std::size_t>::max();
    opts.num_categories = c.scene.num_categories;
    const Corpus in = Corpus::load(input, opts);
    std::vector<AnnotatedVideo> videos(in.size());
    parallel_for(in.size(), threads, [&](std::size_t i) {
        Rng rng = make_rng(c.seed, "detector", i);
        videos[i] = simulate_detector(in.video(i), c.noise, c.scene.num_categories, rng);
    });
    write_corpus(f.out, videos);
    write_json(fs::path(f.out) / "annotate_config.json", to_json(c));
    std::cout << "annotated " << videos.size() << " videos into " << f.out << '\n';
    return 0;
}

int cmd_train(const CommonFlags& f, const std::string& resume, const std::optional<std::size_t>& steps) {
    TrainConfig c = train_config_from_json(read_json_file(f.config));
    if (f.seed) c.seed = *f.seed;
    if (f.threads) c.threads = *f.threads;
    if (!f.out.empty()) c.out_dir = f.out;
    if (steps) c.total_steps = *steps;
    train_config_from_json(to_json(c));  // overrides must still satisfy the invariants
    std::optional<fs::path> from;
    if (!resume.empty()) from = resume;
    const RunReport r = train(c, from);
    std::cout << r.to_json().dump(2) << '\n';
    return 0;
}

int cmd_eval_nn(const CommonFlags& f, const std::vector<std::string>& ckpts) {
    const EvalConfig c = load_eval_config(f);
    if (c.corpus.empty()) throw ConfigError({"corpus: eval-nn needs a held-out corpus manifest"});
    const Corpus corpus = Corpus::load(c.corpus, c.corpus_options);
    const auto models = load_models(ckpts);
    Metrics m;
    m.values["protocol"] = "held-out videos; raw grid cell at each box center, L2-normalized";
    std::vector<std::string> names;
    Series frac{"match fraction", {}, {}}, chance{"chance", {}, {}};
    std::vector<NNResult> results;
    for (std::size_t i = 0; i < models.size(); ++i) {
        const NNResult r = nn_class_match_fraction(models[i].params, corpus, c.nn);
        results.push_back(r);
        json row = model_json(models[i]);
        row["fraction"] = r.fraction;
        row["chance"] = r.chance;
        row["boxes"] = r.boxes;
        row["matches"] = r.matches;
        m.values["models"].push_back(row);
        names.push_back("#" + std::to_string(i));
        frac.x.push_back(static_cast<double>(i));
        frac.y.push_back(r.fraction);
        chance.x.push_back(static_cast<double>(i));
        chance.y.push_back(r.chance);
        std::printf("%s step=%zu fraction=%.4f chance=%.4f boxes=%zu\n", models[i].name.c_str(), models[i].step,
                    r.fraction, r.chance, r.boxes);
    }
    for (std::size_t i = 1; i < results.size(); ++i) {
        const auto& a = results[0];
        const auto& b = results[i];
        const Table2x2 t{{{static_cast<std::int64_t>(a.matches), static_cast<std::int64_t>(a.boxes - a.matches)},
                          {static_cast<std::int64_t>(b.matches), static_cast<std::int64_t>(b.boxes - b.matches)}}};
        const double p = fisher_exact_2x2(t);
        m.values["fisher"].push_back({{"a", models[0].name}, {"b", models[i].name}, {"p", p}});
        std::printf("fisher %s vs %s: p=%.3g\n", models[0].name.c_str(), models[i].name.c_str(), p);
    }
    Chart chart = bar_chart("nn_match", "Nearest-neighbour category match", "fraction", names);
    chart.series = {frac, chance};
    m.charts.push_back(chart);
    finish(m, f.out, to_json(c));
    return 0;
}

int cmd_eval_transfer(const CommonFlags& f, const std::vector<std::string>& ckpts) {
    const EvalConfig c = load_eval_config(f);
    const auto models = load_models(ckpts);
    Metrics m;
    m.values["protocol"] = "frozen encoder, linear probe on labeled stills";
    std::vector<std::string> names;
    for (std::size_t i = 0; i < models.size(); ++i) {
        names.push_back("#" + std::to_string(i));
        m.values["models"].push_back(model_json(models[i]));
    }
    Chart chart = bar_chart("transfer", "Linear-probe accuracy", "test accuracy", names);
    for (auto task : c.tasks) {
        const ProbeTaskData data = make_probe_task(task, c.probe);
        Series s{probe_task_name(task), {}, {}};
        for (std::size_t i = 0; i < models.size(); ++i) {
            const ProbeResult r = linear_probe_transfer(models[i].params, data, c.probe);
            m.values["models"][i]["tasks"][probe_task_name(task)] = {
                {"test_accuracy", r.test_accuracy},
                {"chance", r.chance},
                {"chosen_lr", r.fit.chosen_lr},
                {"chosen_schedule", r.fit.chosen_schedule},
                {"val_accuracy", r.fit.val_accuracy}};
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(r.test_accuracy);
            std::printf("%s %s accuracy=%.4f chance=%.4f\n", models[i].name.c_str(), probe_task_name(task),
                        r.test_accuracy, r.chance);
        }
        chart.series.push_back(s);
    }
    m.charts.push_back(chart);
    finish(m, f.out, to_json(c));
    return 0;
}

int cmd_eval_robustness(const CommonFlags& f, const std::vector<std::string>& ckpts, const std::string& task_name) {
    const EvalConfig c = load_eval_config(f);
    const ProbeTask task = parse_probe_task(task_name);
    const auto models = load_models(ckpts);
    Metrics m;
    m.values["task"] = probe_task_name(task);
    std::vector<std::string> names;
    for (const auto& p : c.perturbations) {
        std::ostringstream s;
        s << perturb_name(p.kind) << '@' << p.level;
        names.push_back(s.str());
    }
    Chart chart = bar_chart("robustness", "Accuracy drop under perturbation", "delta (clean - perturbed)", names);
    chart.x_label = "perturbation";
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto rows = robustness_delta(models[i].params, task, c.perturbations, c.probe);
        json mj = model_json(models[i]);
        Series s{"#" + std::to_string(i), {}, {}};
        for (std::size_t k = 0; k < rows.size(); ++k) {
            mj["rows"].push_back({{"kind", perturb_name(rows[k].perturbation.kind)},
                                  {"level", rows[k].perturbation.level},
                                  {"clean_accuracy", rows[k].clean_accuracy},
                                  {"perturbed_accuracy", rows[k].perturbed_accuracy},
                                  {"delta", rows[k].delta}});
            s.x.push_back(static_cast<double>(k));
            s.y.push_back(rows[k].delta);
            std::printf("%s %s clean=%.4f perturbed=%.4f delta=%.4f\n", models[i].name.c_str(), names[k].c_str(),
                        rows[k].clean_accuracy, rows[k].perturbed_accuracy, rows[k].delta);
        }
        m.values["models"].push_back(mj);
        chart.series.push_back(s);
    }
    m.charts.push_back(chart);
    finish(m, f.out, to_json(c));
    return 0;
}

int cmd_stats(const CommonFlags& f) {
    const EvalConfig c = load_eval_config(f);
    if (c.corpus.empty()) throw ConfigError({"corpus: stats needs a corpus manifest"});
    const Corpus corpus = Corpus::load(c.corpus, c.corpus_options);
    Rng rng = make_rng(c.seed, "stats");
    // Episodes with the training geometry, so recurrence counts what one training sample sees.
    const TrainConfig geometry;
    const CorpusStats s = corpus_stats(corpus, std::min(c.stats_sample, corpus.size()), geometry.shots_per_video,
                                       geometry.frames_per_shot, rng);
    Metrics m;
    m.values["videos"] = corpus.size();
    m.values["videos_sampled"] = s.videos_sampled;
    m.values["videos_skipped"] = s.videos_skipped;
    for (const auto& cat : s.categories) {
        json row = {{"category", cat.category}, {"video_fraction", cat.video_fraction}};
        row["mean_recurrence"] = cat.mean_recurrence ? json(*cat.mean_recurrence) : json(nullptr);
        m.values["categories"].push_back(row);
    }
    Chart chart;
    chart.id = "score_cdf";
    chart.title = "Detection score distribution";
    chart.x_label = "score";
    chart.y_label = "fraction of boxes below";
    chart.series.push_back({"boxes", s.score_edges, s.score_cumulative});
    m.charts.push_back(chart);
    Chart cats = bar_chart("categories", "Videos containing each category", "fraction of videos", {});
    cats.x_label = "category";
    Series frac{"fraction", {}, {}};
    for (const auto& cat : s.categories) {
        cats.categories.push_back(std::to_string(cat.category));
        frac.x.push_back(cat.category);
        frac.y.push_back(cat.video_fraction);
    }
    cats.series.push_back(frac);
    m.charts.push_back(cats);
    finish(m, f.out, to_json(c));
    return 0;
}

double& sweep_target(TrainConfig& c, const std::string& param) {
    if (param == "omega") return c.weights.omega;
    if (param == "beta") return c.weights.beta;
    if (param == "gamma") return c.weights.gamma;
    if (param == "margin_frame") return c.weights.margin_frame;
    if (param == "margin_object") return c.weights.margin_object;
    if (param == "bce_weight") return c.weights.bce_weight;
    if (param == "lr0") return c.optimizer.lr0;
    throw ConfigError({"--param: unknown sweep parameter '" + param + "'"});
}

int cmd_sweep(const CommonFlags& f, const std::string& param, const std::vector<double>& values,
              const std::string& eval_path, const std::optional<std::size_t>& steps) {
    TrainConfig base = train_config_from_json(read_json_file(f.config));
    if (f.seed) base.seed = *f.seed;
    if (f.threads) base.threads = *f.threads;
    if (steps) base.total_steps = *steps;
    CommonFlags ef = f;
    ef.config = eval_path;
    EvalConfig ec = load_eval_config(ef);
    sweep_target(base, param);
    const fs::path out = f.out;
    auto corpus = std::make_shared<const Corpus>(Corpus::load(base.corpus, base.corpus_options));
    std::optional<Corpus> held_out;
    if (!ec.corpus.empty()) held_out = Corpus::load(ec.corpus, ec.corpus_options);
    const ProbeTask task = ec.tasks.front();
    const ProbeTaskData data = make_probe_task(task, ec.probe);

    Metrics m;
    m.values["param"] = param;
    m.values["task"] = probe_task_name(task);
    Series acc{probe_task_name(task) + std::string(" accuracy"), {}, {}};
    Series nn{"nn match fraction", {}, {}};
    for (double v : values) {
        TrainConfig c = base;
        sweep_target(c, param) = v;
        std::ostringstream dir;
        dir << param << '_' << v;
        c.out_dir = (out / dir.str()).string();
        train_config_from_json(to_json(c));
        const RunReport r = train(c, corpus);
        const ModelParams params = load_checkpoint(r.checkpoint).params.frozen();
        const ProbeResult pr = linear_probe_transfer(params, data, ec.probe);
        json row = {{"value", v},
                    {"checkpoint", r.checkpoint.string()},
                    {"checkpoint_digest", r.checkpoint_digest},
                    {"final_loss", r.final_step.total},
                    {"probe_accuracy", pr.test_accuracy}};
        acc.x.push_back(v);
        acc.y.push_back(pr.test_accuracy);
        if (held_out) {
            const NNResult n = nn_class_match_fraction(params, *held_out, ec.nn);
            row["nn_fraction"] = n.fraction;
            nn.x.push_back(v);
            nn.y.push_back(n.fraction);
        }
        m.values["points"].push_back(row);
        std::printf("%s=%g probe=%.4f\n", param.c_str(), v, pr.test_accuracy);
    }
    Chart chart;
    chart.id = "sweep_" + param;
    chart.title = "Sensitivity to " + param;
    chart.x_label = param;
    chart.y_label = "score";
    chart.series.push_back(acc);
    if (held_out) chart.series.push_back(nn);
    m.charts.push_back(chart);
    finish(m, out, {{"train", to_json(base)}, {"eval", to_json(ec)}, {"param", param}, {"values", values}});
    return 0;
}

int report_suite(const selfcheck::SuiteResult& r, const char* name) {
    std::printf("%s: %zu checks, %zu failures, max_rel_err=%.3e\n", name, r.checks, r.failures, r.max_rel_error);
    return r.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hiervid: hierarchical video representation learning on synthetic corpora"};
    app.require_subcommand(1);
    std::string backend = "auto";
    app.add_option("--backend", backend, "kernel backend")->check(CLI::IsMember({"auto", "scalar", "avx2"}));

    CommonFlags gen_f, ann_f, train_f, nn_f, tr_f, rob_f, stats_f, sweep_f, grad_f, orc_f;
    std::optional<std::size_t> gen_videos, train_steps, sweep_steps;
    std::string ann_in, resume, rob_task = "category", sweep_param, sweep_eval;
    std::vector<std::string> nn_ck, tr_ck, rob_ck;
    std::vector<double> sweep_values;

    auto* gen = app.add_subcommand("generate", "render a synthetic annotated corpus");
    add_common(gen, gen_f, true, true);
    gen->add_option("--videos", gen_videos, "number of videos (overrides the config)");

    auto* ann = app.add_subcommand("annotate", "run the detector simulation over a ground-truth corpus");
    add_common(ann, ann_f, false, true);
    ann->add_option("--in", ann_in, "input manifest.jsonl")->required()->check(CLI::ExistingFile);

    auto* tr = app.add_subcommand("train", "train a model from a train config");
    add_common(tr, train_f, true, false);
    tr->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
    tr->add_option("--steps", train_steps, "total steps (overrides the config)");

    auto* enn = app.add_subcommand("eval-nn", "nearest-neighbour category match on held-out box embeddings");
    add_common(enn, nn_f, false, true);
    enn->add_option("--ckpt", nn_ck, "checkpoint(s); the first is compared with each other by Fisher's exact test")
        ->required()
        ->check(CLI::ExistingFile);

    auto* etr = app.add_subcommand("eval-transfer", "linear-probe transfer on labeled stills");
    add_common(etr, tr_f, false, true);
    etr->add_option("--ckpt", tr_ck, "checkpoint(s)")->required()->check(CLI::ExistingFile);

    auto* erob = app.add_subcommand("eval-robustness", "probe accuracy drop under image perturbations");
    add_common(erob, rob_f, false, true);
    erob->add_option("--ckpt", rob_ck, "checkpoint(s)")->required()->check(CLI::ExistingFile);
    erob->add_option("--task", rob_task, "probe task")->check(CLI::IsMember({"category", "count", "quadrant"}));

    auto* st = app.add_subcommand("stats", "corpus statistics");
    add_common(st, stats_f, true, true);

    auto* sw = app.add_subcommand("sweep", "train and evaluate once per value of a loss or optimizer parameter");
    add_common(sw, sweep_f, true, true);
    sw->add_option("--param", sweep_param, "parameter name")
        ->required()
        ->check(CLI::IsMember({"omega", "beta", "gamma", "margin_frame", "margin_object", "bce_weight", "lr0"}));
    sw->add_option("--values", sweep_values, "values to try")->required()->delimiter(',');
    sw->add_option("--eval-config", sweep_eval, "eval config for the probe and NN diagnostics")
        ->check(CLI::ExistingFile);
    sw->add_option("--steps", sweep_steps, "training steps per value (overrides the config)");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    grad_f.seed = 0;
    gc->add_option("--seed", grad_f.seed, "root seed");
    auto* oc = app.add_subcommand("oracle-check", "library routines against independent reference implementations");
    orc_f.seed = 0;
    oc->add_option("--seed", orc_f.seed, "root seed");

    if (argc > 1 && argv[1][0] != '-') {
        const std::string name = argv[1];
        const auto known = app.get_subcommands([&](CLI::App* s) { return s->get_name() == name; });
        if (known.empty()) {
            std::cerr << "unknown subcommand: " << name << "\n\n" << app.help();
            return 1;
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << '\n' << app.help();
        return 1;
    }

    try {
        if (backend == "scalar") kernels::set_backend(kernels::Backend::scalar);
        if (backend == "avx2") {
            if (!kernels::cpu_has_avx2()) throw std::runtime_error("this CPU lacks AVX2/FMA");
            kernels::set_backend(kernels::Backend::avx2);
        }
        if (*gen) return cmd_generate(gen_f, gen_videos);
        if (*ann) return cmd_annotate(ann_f, ann_in);
        if (*tr) return cmd_train(train_f, resume, train_steps);
        if (*enn) return cmd_eval_nn(nn_f, nn_ck);
        if (*etr) return cmd_eval_transfer(tr_f, tr_ck);
        if (*erob) return cmd_eval_robustness(rob_f, rob_ck, rob_task);
        if (*st) return cmd_stats(stats_f);
        if (*sw) return cmd_sweep(sweep_f, sweep_param, sweep_values, sweep_eval, sweep_steps);
        if (*gc) return report_suite(selfcheck::run_gradcheck_suite(std::cout, *grad_f.seed), "gradcheck");
        if (*oc) return report_suite(selfcheck::run_oracle_suite(std::cout, *orc_f.seed), "oracle-check");
    } catch (const ConfigError& e) {
        for (const auto& msg : e.errors()) std::cerr << "config error: " << msg << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
