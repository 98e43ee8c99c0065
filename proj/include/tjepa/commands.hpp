#pragma once
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tjepa/analysis.hpp"
#include "tjepa/checkpoint.hpp"
#include "tjepa/downstream.hpp"
#include "tjepa/synthetic.hpp"
#include "tjepa/training.hpp"

namespace tjepa {

namespace fs = std::filesystem;

inline std::string iso_utc_now() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// One manifest per run: command, config echo, seed, timestamps, input and
// artifact content hashes. Re-running the same command must reproduce the
// artifact hashes (timestamps aside).
struct RunManifest {
    std::string command;
    json config_echo = json::object();
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::pair<std::string, std::string>> inputs;     // path, hash
    std::vector<std::pair<std::string, std::string>> artifacts;  // path, hash

    void add_input(const std::string& path) { inputs.emplace_back(path, fnv64_file_hex(path)); }
    void add_artifact(const std::string& path) { artifacts.emplace_back(path, fnv64_file_hex(path)); }

    json to_json() const {
        json in = json::array(), art = json::array();
        for (const auto& [p, h] : inputs) in.push_back({{"path", p}, {"hash", h}});
        for (const auto& [p, h] : artifacts) art.push_back({{"path", p}, {"hash", h}});
        return json{{"command", command}, {"config", config_echo},   {"seed", seed},
                    {"started_at", started_at}, {"finished_at", finished_at},
                    {"inputs", in},             {"artifacts", art}};
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw io_error("cannot write manifest " + path);
        out << to_json().dump(2) << "\n";
    }
};

namespace detail {

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw parse_error("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

inline std::string checkpoint_stem(const std::string& path) {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") return path.substr(0, path.size() - 5);
    if (path.size() > 4 && path.substr(path.size() - 4) == ".bin") return path.substr(0, path.size() - 4);
    return path;
}

inline std::string epoch_stem(const std::string& dir, long epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "checkpoint_epoch%04ld", epoch);
    return (fs::path(dir) / buf).string();
}

inline std::vector<double> read_label_file(const std::string& path, std::size_t expected) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open labels file: " + path);
    std::vector<double> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        double v;
        if (!detail::parse_double(t, v)) {
            if (line_no == 1) continue;  // tolerate a single header line
            throw parse_error("labels file row " + std::to_string(line_no) + ": not numeric");
        }
        out.push_back(v);
    }
    if (out.size() != expected)
        throw parse_error("labels file has " + std::to_string(out.size()) + " values, dataset has " +
                          std::to_string(expected) + " rows");
    return out;
}

inline bool labels_are_integral(const std::vector<double>& y) {
    for (double v : y)
        if (v != std::floor(v) || v < 0) return false;
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainCmdOptions {
    std::string config_path;
    std::string data_path;
    std::string out_dir;
    bool has_header = true;
    std::string target_column = "y";
    bool seed_override = false;
    std::uint64_t seed = 0;
};

struct PretrainCmdResult {
    TrainConfig config;
    std::string final_checkpoint;
    std::string metrics_path;
    std::string manifest_path;
    std::vector<StepRecord> log;
    std::vector<SnapshotRecord> snapshots;
};

// Shared by cmd_pretrain and the ablation harness so every arm follows the
// exact same code path.
inline PretrainCmdResult run_pretrain_to_dir(const TrainConfig& cfg, const TabularDataset& ds_in,
                                             const std::string& out_dir, RunManifest& manifest) {
    TabularDataset ds = ds_in;
    assign_splits(ds, cfg.seed);
    FeatureSchema schema = fit_preprocessor(ds);
    fs::create_directories(out_dir);

    PretrainCmdResult result;
    result.config = cfg;
    result.metrics_path = (fs::path(out_dir) / "metrics.ndjson").string();
    std::ofstream metrics(result.metrics_path);
    if (!metrics) throw io_error("cannot write " + result.metrics_path);
    std::ofstream snapshots((fs::path(out_dir) / "snapshots.ndjson").string());

    json config_echo = train_config_to_json(cfg);
    std::vector<std::string> checkpoint_stems;
    PretrainHooks<float> hooks;
    hooks.on_step = [&](const StepRecord& r) {
        metrics << json{{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss},
                        {"lr", r.lr},     {"momentum", r.momentum}}
                       .dump()
                << "\n";
    };
    hooks.on_checkpoint = [&](long epoch, ModelState<float>& m, const RngBundle& rngs,
                              std::uint64_t step) {
        std::string stem = detail::epoch_stem(out_dir, epoch);
        save_checkpoint<float>(stem, m, schema, epoch, step, rngs.serialize(), config_echo);
        checkpoint_stems.push_back(stem);
    };
    hooks.on_snapshot = [&](const SnapshotRecord& s) {
        snapshots << json{{"epoch", s.epoch},
                          {"uniformity", s.uniformity},
                          {"mean_pairwise_dist", s.mean_pairwise_dist}}
                         .dump()
                  << "\n";
    };

    PretrainResult<float> run = pretrain<float>(ds, schema, cfg, hooks);
    metrics.close();
    snapshots.close();
    result.log = std::move(run.log);
    result.snapshots = std::move(run.snapshots);
    result.final_checkpoint = checkpoint_stems.empty() ? "" : checkpoint_stems.back();

    manifest.config_echo = config_echo;
    manifest.seed = cfg.seed;
    for (const std::string& stem : checkpoint_stems) {
        manifest.add_artifact(stem + ".json");
        manifest.add_artifact(stem + ".bin");
    }
    manifest.add_artifact(result.metrics_path);
    return result;
}

inline PretrainCmdResult cmd_pretrain(const PretrainCmdOptions& opt) {
    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.started_at = iso_utc_now();
    json cfg_json = detail::load_json_file(opt.config_path);
    TrainConfig cfg = train_config_from_json(cfg_json);
    if (opt.seed_override) cfg.seed = opt.seed;
    TabularDataset ds = load_csv(opt.data_path, opt.has_header, opt.target_column);
    manifest.add_input(opt.config_path);
    manifest.add_input(opt.data_path);

    PretrainCmdResult result = run_pretrain_to_dir(cfg, ds, opt.out_dir, manifest);
    manifest.finished_at = iso_utc_now();
    result.manifest_path = (fs::path(opt.out_dir) / "manifest.json").string();
    manifest.write(result.manifest_path);
    return result;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeCmdOptions {
    std::string checkpoint_path;
    std::string data_path;
    std::string labels_path;  // empty: use the data file's target column
    std::string head = "linear";
    std::string projection = "linear_flatten";
    std::string task;  // empty: infer from labels
    std::string split = "test";
    bool has_header = true;
    std::string target_column = "y";
    std::uint64_t seed = 0;
    std::string out_dir;  // optional
};

struct ProbeCmdResult {
    ProbeResult probe;
    json report;
};

inline ProbeCmdResult cmd_probe(const ProbeCmdOptions& opt) {
    RunManifest manifest;
    manifest.command = "probe";
    manifest.started_at = iso_utc_now();

    std::string stem = detail::checkpoint_stem(opt.checkpoint_path);
    LoadedCheckpoint<float> ckpt = load_checkpoint<float>(stem);
    TrainConfig train_cfg = train_config_from_json(ckpt.config_echo);
    TabularDataset ds = load_csv(opt.data_path, opt.has_header, opt.target_column);
    assign_splits(ds, train_cfg.seed);
    FeatureSchema schema = fit_preprocessor(ds);
    if (schema.hash() != ckpt.schema_hash)
        throw config_error("schema hash mismatch: dataset " + schema.hash() + " vs checkpoint " +
                           ckpt.schema_hash);

    std::vector<double> labels;
    if (!opt.labels_path.empty()) {
        labels = detail::read_label_file(opt.labels_path, ds.n_rows);
    } else {
        if (!ds.has_target())
            throw config_error("no labels file given and data has no target column");
        labels = ds.real_labels();
    }
    Task task = opt.task.empty()
                    ? (detail::labels_are_integral(labels) ? Task::classification : Task::regression)
                    : task_from_name(opt.task);

    std::size_t d = ckpt.model.feature_count();
    std::size_t h = ckpt.model.hyper.hidden;
    ProbeData<float> data;
    auto fill = [&](Split s, Tensor<float>& x, std::vector<double>& y) {
        std::vector<std::size_t> rows = ds.rows_in(s);
        x = representation_matrix(ckpt.model, ds, schema, rows);
        y.resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) y[i] = labels[rows[i]];
    };
    fill(Split::train, data.train_x, data.train_y);
    fill(Split::val, data.val_x, data.val_y);
    fill(Split::test, data.test_x, data.test_y);

    DetRng proj_rng(splitmix64(opt.seed ^ 0x707ULL));
    ProjectionMode mode = projection_from_name(opt.projection);
    Projection<float> proj = init_projection<float>(mode, d, h, /*flatten_out=*/h, proj_rng);

    ProbeCmdResult out;
    Split eval_split = split_from_name(opt.split);
    if (opt.head == "linear") {
        out.probe = train_linear_probe(data, task, 200, 1e-3, opt.seed, eval_split, &proj);
    } else if (opt.head == "mlp") {
        out.probe = train_mlp_head(data, task, MlpHeadOptions{}, opt.seed, eval_split, &proj);
    } else {
        throw config_error("unknown head '" + opt.head + "' (expected linear or mlp)");
    }

    out.report = json{{"task", task == Task::classification ? "classification" : "regression"},
                      {"metric", out.probe.metric},
                      {"value", out.probe.value},
                      {"split", out.probe.split},
                      {"seed", out.probe.seed},
                      {"head", opt.head},
                      {"projection", opt.projection},
                      {"checkpoint", stem},
                      {"schema_hash", ckpt.schema_hash}};

    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        std::string report_path = (fs::path(opt.out_dir) / "probe_result.json").string();
        std::ofstream rep(report_path);
        rep << out.report.dump(2) << "\n";
        rep.close();
        manifest.add_input(stem + ".json");
        manifest.add_input(opt.data_path);
        manifest.seed = opt.seed;
        manifest.config_echo = out.report;
        manifest.add_artifact(report_path);
        manifest.finished_at = iso_utc_now();
        manifest.write((fs::path(opt.out_dir) / "manifest.json").string());
    }
    return out;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeCmdOptions {
    std::string checkpoint_path;
    std::string data_path;
    std::vector<std::string> metrics = {"kl", "uniformity", "dist", "variance"};
    double t = 2.0;
    std::string split = "train";
    bool has_header = true;
    std::string target_column = "y";
    std::size_t sample_cap = 2000;
    std::string out_dir;      // optional
    std::string export_stem;  // optional: write the split's embeddings as a container
};

inline json cmd_analyze(const AnalyzeCmdOptions& opt) {
    for (const std::string& m : opt.metrics)
        if (m != "kl" && m != "uniformity" && m != "dist" && m != "variance")
            throw config_error("unknown metric '" + m + "' (expected kl, uniformity, dist, variance)");

    std::string stem = detail::checkpoint_stem(opt.checkpoint_path);
    LoadedCheckpoint<float> ckpt = load_checkpoint<float>(stem);
    TrainConfig train_cfg = train_config_from_json(ckpt.config_echo);
    TabularDataset ds = load_csv(opt.data_path, opt.has_header, opt.target_column);
    assign_splits(ds, train_cfg.seed);
    FeatureSchema schema = fit_preprocessor(ds);
    if (schema.hash() != ckpt.schema_hash)
        throw config_error("schema hash mismatch: dataset " + schema.hash() + " vs checkpoint " +
                           ckpt.schema_hash);

    std::vector<std::size_t> rows = ds.rows_in(split_from_name(opt.split));
    bool needs_pairs = false;
    for (const std::string& m : opt.metrics) needs_pairs |= m != "variance";
    if (needs_pairs && rows.size() < 2)
        throw config_error("split '" + opt.split + "' has " + std::to_string(rows.size()) +
                           " rows; pairwise metrics need at least 2");
    if (rows.empty()) throw config_error("split '" + opt.split + "' is empty");

    Tensor<double> reps =
        representation_matrix(ckpt.model, ds, schema, rows).cast<double>();

    json metrics = json::object();
    for (const std::string& m : opt.metrics) {
        if (m == "kl")
            metrics["kl"] = mean_pairwise(PairwiseMetric::kl, reps, opt.sample_cap);
        else if (m == "dist")
            metrics["dist"] = mean_pairwise(PairwiseMetric::euclidean, reps, opt.sample_cap);
        else if (m == "uniformity")
            metrics["uniformity"] = uniformity(reps, opt.t, opt.sample_cap);
        else {
            FeatureRanking ranking = rank_by_variance(ckpt.model, ds, schema, rows);
            metrics["variance"] = ranking.scores;
            metrics["variance_ranking"] = ranking.order;
        }
    }
    json report{{"checkpoint", stem},     {"epoch", ckpt.epoch}, {"split", opt.split},
                {"rows", rows.size()},    {"t", opt.t},          {"metrics", metrics},
                {"schema_hash", ckpt.schema_hash}};

    if (!opt.export_stem.empty()) {
        export_embeddings(ckpt.model, ds, schema, rows, opt.export_stem,
                          json{{"checkpoint", stem}, {"epoch", ckpt.epoch}, {"split", opt.split}});
        report["export"] = opt.export_stem;
    }

    if (!opt.out_dir.empty()) {
        fs::create_directories(opt.out_dir);
        RunManifest manifest;
        manifest.command = "analyze";
        manifest.started_at = iso_utc_now();
        manifest.config_echo = report;
        std::string report_path = (fs::path(opt.out_dir) / "analysis.json").string();
        std::ofstream rep(report_path);
        rep << report.dump(2) << "\n";
        rep.close();
        manifest.add_input(stem + ".json");
        manifest.add_input(opt.data_path);
        manifest.add_artifact(report_path);
        manifest.finished_at = iso_utc_now();
        manifest.write((fs::path(opt.out_dir) / "manifest.json").string());
    }
    return report;
}

// ---------------------------------------------------------------------------
// REG-token ablation harness
// ---------------------------------------------------------------------------

struct AblateCmdOptions {
    std::string config_path;
    std::string data_path;
    std::vector<long> tokens = {0, 1};
    std::string out_dir;
    bool has_header = true;
    std::string target_column = "y";
};

// Runs the pretrain path once per token count with a shared seed and emits
// aligned per-epoch loss curves plus final uniformity per arm.
inline json cmd_ablate_reg(const AblateCmdOptions& opt) {
    if (opt.tokens.empty()) throw config_error("ablate: token list is empty");
    for (long t : opt.tokens)
        if (t < 0) throw config_error("ablate: token counts must be >= 0");

    json cfg_json = detail::load_json_file(opt.config_path);
    TrainConfig base_cfg = train_config_from_json(cfg_json);
    TabularDataset ds = load_csv(opt.data_path, opt.has_header, opt.target_column);
    fs::create_directories(opt.out_dir);

    RunManifest manifest;
    manifest.command = "ablate-reg";
    manifest.started_at = iso_utc_now();
    manifest.add_input(opt.config_path);
    manifest.add_input(opt.data_path);
    manifest.seed = base_cfg.seed;

    json arms = json::array();
    for (long tokens : opt.tokens) {
        TrainConfig cfg = base_cfg;
        cfg.n_reg_tokens = static_cast<std::size_t>(tokens);
        std::string arm_dir = (fs::path(opt.out_dir) / ("reg" + std::to_string(tokens))).string();
        RunManifest arm_manifest;
        arm_manifest.command = "pretrain";
        arm_manifest.started_at = iso_utc_now();
        arm_manifest.add_input(opt.config_path);
        arm_manifest.add_input(opt.data_path);
        PretrainCmdResult run = run_pretrain_to_dir(cfg, ds, arm_dir, arm_manifest);
        arm_manifest.finished_at = iso_utc_now();
        arm_manifest.write((fs::path(arm_dir) / "manifest.json").string());

        // per-epoch mean loss curve, aligned across arms by construction
        std::vector<double> epoch_loss;
        {
            long current = -1;
            double sum = 0;
            std::size_t count = 0;
            for (const StepRecord& r : run.log) {
                if (r.epoch != current && count > 0) {
                    epoch_loss.push_back(sum / static_cast<double>(count));
                    sum = 0;
                    count = 0;
                }
                current = r.epoch;
                sum += r.loss;
                ++count;
            }
            if (count > 0) epoch_loss.push_back(sum / static_cast<double>(count));
        }
        json arm{{"n_reg_tokens", tokens},
                 {"dir", arm_dir},
                 {"epoch_mean_loss", epoch_loss},
                 {"final_loss", run.log.empty() ? 0.0 : run.log.back().loss},
                 {"final_uniformity", run.snapshots.empty() ? 0.0 : run.snapshots.back().uniformity},
                 {"final_checkpoint", run.final_checkpoint}};
        arms.push_back(std::move(arm));
        manifest.add_artifact((fs::path(arm_dir) / "metrics.ndjson").string());
    }

    json report{{"tokens", opt.tokens}, {"arms", arms}, {"seed", base_cfg.seed}};
    std::string report_path = (fs::path(opt.out_dir) / "ablation_report.json").string();
    std::ofstream rep(report_path);
    if (!rep) throw io_error("cannot write " + report_path);
    rep << report.dump(2) << "\n";
    rep.close();
    manifest.add_artifact(report_path);
    manifest.finished_at = iso_utc_now();
    manifest.write((fs::path(opt.out_dir) / "manifest.json").string());
    return report;
}

// ---------------------------------------------------------------------------
// synthetic fixture
// ---------------------------------------------------------------------------

struct SyntheticCmdOptions {
    std::size_t n = 1000;
    std::size_t d = 8;
    std::string task = "cls";
    std::uint64_t seed = 0;
    std::string out_path;
};

inline void cmd_make_synthetic(const SyntheticCmdOptions& opt) {
    RunManifest manifest;
    manifest.command = "make-synthetic";
    manifest.started_at = iso_utc_now();
    SyntheticSpec spec;
    spec.n = opt.n;
    spec.d = opt.d;
    spec.task = task_from_name(opt.task);
    spec.seed = opt.seed;
    make_synthetic(spec, opt.out_path);
    manifest.seed = opt.seed;
    manifest.config_echo = json{{"n", opt.n}, {"d", opt.d}, {"task", opt.task}, {"seed", opt.seed}};
    manifest.add_artifact(opt.out_path);
    manifest.finished_at = iso_utc_now();
    manifest.write(opt.out_path + ".manifest.json");
}

}  // namespace tjepa
