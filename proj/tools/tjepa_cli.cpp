// Command-line front end: pretraining, probing, representation analysis, the
// REG-token ablation harness and the synthetic fixture generator.
#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "tjepa/commands.hpp"

namespace {

using namespace tjepa;

void emit_error(const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", message}, {"exit", code}}.dump() << "\n";
}

std::vector<long> parse_token_list(const std::string& csv) {
    std::vector<long> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        std::size_t comma = csv.find(',', start);
        std::string item = csv.substr(start, comma == std::string::npos ? std::string::npos
                                                                        : comma - start);
        if (!item.empty()) {
            char* end = nullptr;
            long v = std::strtol(item.c_str(), &end, 10);
            if (end == item.c_str() || *end != '\0')
                throw config_error("bad token count '" + item + "'");
            out.push_back(v);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::vector<std::string> parse_metric_list(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        std::size_t comma = csv.find(',', start);
        std::string item = csv.substr(start, comma == std::string::npos ? std::string::npos
                                                                        : comma - start);
        if (!item.empty()) out.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"T-JEPA: augmentation-free self-supervised pretraining for tabular data"};
    app.require_subcommand(1);

    PretrainCmdOptions pre;
    CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "pretrain on a CSV dataset");
    pretrain_cmd->add_option("--config", pre.config_path, "JSON config file")->required();
    pretrain_cmd->add_option("--data", pre.data_path, "CSV dataset")->required();
    pretrain_cmd->add_option("--out", pre.out_dir, "output directory")->required();
    std::int64_t seed_flag = -1;
    pretrain_cmd->add_option("--seed", seed_flag, "override the config seed");
    pretrain_cmd->add_option("--target-column", pre.target_column,
                             "target column to hold apart (default y; empty for none)");
    bool pre_no_header = false;
    pretrain_cmd->add_flag("--no-header", pre_no_header, "data file has no header row");

    ProbeCmdOptions probe;
    CLI::App* probe_cmd = app.add_subcommand("probe", "train a probe on frozen representations");
    probe_cmd->add_option("--checkpoint", probe.checkpoint_path, "checkpoint manifest or stem")->required();
    probe_cmd->add_option("--data", probe.data_path, "CSV dataset")->required();
    probe_cmd->add_option("--labels", probe.labels_path, "single-column label file");
    probe_cmd->add_option("--head", probe.head, "probe head")->check(CLI::IsMember({"linear", "mlp"}));
    probe_cmd->add_option("--projection", probe.projection, "projection mode")
        ->check(CLI::IsMember(
            {"linear_flatten", "linear_per_feature", "conv", "max_pool", "mean_pool"}));
    probe_cmd->add_option("--task", probe.task, "cls or reg (default: inferred)");
    probe_cmd->add_option("--split", probe.split, "evaluation split")
        ->check(CLI::IsMember({"train", "val", "test"}));
    probe_cmd->add_option("--seed", probe.seed, "probe seed");
    probe_cmd->add_option("--target-column", probe.target_column, "target column in the data file");
    probe_cmd->add_option("--out", probe.out_dir, "optional output directory");
    bool probe_no_header = false;
    probe_cmd->add_flag("--no-header", probe_no_header, "data file has no header row");

    AnalyzeCmdOptions analyze;
    std::string metric_csv = "kl,uniformity,dist,variance";
    CLI::App* analyze_cmd = app.add_subcommand("analyze", "representation-space metrics");
    analyze_cmd->add_option("--checkpoint", analyze.checkpoint_path, "checkpoint manifest or stem")
        ->required();
    analyze_cmd->add_option("--data", analyze.data_path, "CSV dataset")->required();
    analyze_cmd->add_option("--metrics", metric_csv, "comma list: kl,uniformity,dist,variance");
    analyze_cmd->add_option("--t", analyze.t, "uniformity temperature (default 2)");
    analyze_cmd->add_option("--split", analyze.split, "split to analyze")
        ->check(CLI::IsMember({"train", "val", "test"}));
    analyze_cmd->add_option("--target-column", analyze.target_column, "target column in the data file");
    analyze_cmd->add_option("--out", analyze.out_dir, "optional output directory");
    analyze_cmd->add_option("--export", analyze.export_stem,
                            "optional stem: write the split's embeddings as manifest + blob");
    bool analyze_no_header = false;
    analyze_cmd->add_flag("--no-header", analyze_no_header, "data file has no header row");

    AblateCmdOptions ablate;
    std::string token_csv = "0,1";
    CLI::App* ablate_cmd = app.add_subcommand("ablate-reg", "REG-token ablation harness");
    ablate_cmd->add_option("--config", ablate.config_path, "JSON config file")->required();
    ablate_cmd->add_option("--data", ablate.data_path, "CSV dataset")->required();
    ablate_cmd->add_option("--tokens", token_csv, "comma list of REG token counts");
    ablate_cmd->add_option("--out", ablate.out_dir, "output directory")->required();
    ablate_cmd->add_option("--target-column", ablate.target_column, "target column in the data file");

    SyntheticCmdOptions synth;
    CLI::App* synth_cmd = app.add_subcommand("make-synthetic", "write a synthetic CSV fixture");
    synth_cmd->add_option("--n", synth.n, "rows (>= 100)")->required();
    synth_cmd->add_option("--d", synth.d, "features (>= 2)")->required();
    synth_cmd->add_option("--task", synth.task, "cls or reg")->check(CLI::IsMember({"cls", "reg"}));
    synth_cmd->add_option("--seed", synth.seed, "generator seed");
    synth_cmd->add_option("--out", synth.out_path, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        emit_error(e.what(), 1);
        return 1;
    }

    try {
        if (*pretrain_cmd) {
            pre.has_header = !pre_no_header;
            if (seed_flag >= 0) {
                pre.seed_override = true;
                pre.seed = static_cast<std::uint64_t>(seed_flag);
            }
            PretrainCmdResult res = cmd_pretrain(pre);
            std::cout << nlohmann::json{{"final_checkpoint", res.final_checkpoint},
                                        {"metrics", res.metrics_path},
                                        {"manifest", res.manifest_path},
                                        {"steps", res.log.size()}}
                             .dump(2)
                      << "\n";
        } else if (*probe_cmd) {
            probe.has_header = !probe_no_header;
            ProbeCmdResult res = cmd_probe(probe);
            std::cout << res.report.dump(2) << "\n";
        } else if (*analyze_cmd) {
            analyze.has_header = !analyze_no_header;
            analyze.metrics = parse_metric_list(metric_csv);
            std::cout << cmd_analyze(analyze).dump(2) << "\n";
        } else if (*ablate_cmd) {
            ablate.tokens = parse_token_list(token_csv);
            std::cout << cmd_ablate_reg(ablate).dump(2) << "\n";
        } else if (*synth_cmd) {
            cmd_make_synthetic(synth);
            std::cout << nlohmann::json{{"out", synth.out_path}}.dump(2) << "\n";
        }
    } catch (const config_error& e) {
        emit_error(e.what(), 1);
        return 1;
    } catch (const parse_error& e) {
        emit_error(e.what(), 1);
        return 1;
    } catch (const io_error& e) {
        emit_error(e.what(), 1);
        return 1;
    } catch (const std::exception& e) {
        emit_error(e.what(), 2);
        return 2;
    }
    return 0;
}
