// Command-line laboratory for supervised contrastive losses: gradient
// verification, posterior enumeration oracles, KL-bound checks, synthetic
// hypersphere training and its evaluation reports.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sincere/cli.hpp"
#include "sincere/config.hpp"
#include "sincere/version.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, const std::string& default_out) {
    cmd->add_option("--config", args.config_path, "Key-value config file");
    cmd->add_option("--out", args.out_dir, "Output directory")->default_val(default_out);
    cmd->add_option("--seed", args.seed, "Seed override");
    cmd->add_option("--set", args.overrides, "Override a config key (key=value, repeatable)");
}

int dispatch(const std::string& name, const CommonArgs& args) {
    sincere::Config cfg;
    try {
        if (!args.config_path.empty()) cfg = sincere::Config::from_file(args.config_path);
        for (const auto& kv : args.overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw sincere::config_error("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
        cfg.set("out", args.out_dir);
    } catch (const sincere::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return sincere::cli::kExitConfig;
    } catch (const sincere::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return sincere::cli::kExitIo;
    }
    return sincere::cli::run_command(name, cfg, args.out_dir);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sincere: contrastive-loss numerical laboratory"};
    app.set_version_flag("--version", sincere::kArtifactVersion);
    app.require_subcommand(1);

    std::map<std::string, CommonArgs> args;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"gradcheck", "Analytic gradients vs finite differences and coefficient ranges"},
        {"oracle", "Closed-form posterior vs brute-force enumeration"},
        {"bound", "Monte-Carlo ideal-loss estimates vs the KL bound"},
        {"train", "Train hypersphere embeddings on synthetic data"},
        {"eval", "Margins, histograms and weighted kNN for a train run"},
        {"report", "Compare two or more evaluated runs"},
    };
    for (const auto& [name, description] : commands)
        add_common(app.add_subcommand(name, description), args[name], "out_" + name);

    CLI11_PARSE(app, argc, argv);
    for (const auto& [name, description] : commands)
        if (app.got_subcommand(name)) return dispatch(name, args[name]);
    return sincere::cli::kExitConfig;
}
