// Command-line driver for the FlowCycle toy laboratory: model training,
// editor comparison, ablation sweeps, noise-transfer evaluation and the
// null-condition corruption probe.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowcycle/flowcycle.hpp"

namespace fc = flowcycle;

namespace {

fc::RunConfig load_run_config(const std::string& config_path, const std::string& out_dir,
                              std::uint64_t seed) {
    fc::KeyValueConfig kv =
        config_path.empty() ? fc::KeyValueConfig() : fc::KeyValueConfig::parse_file(config_path);
    fc::RunConfig cfg = fc::RunConfig::from_config(kv);
    cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        if (comma > pos) out.push_back(s.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

int run_train(const fc::RunConfig& cfg) {
    fc::RunConfig fresh = cfg;
    fresh.checkpoint.clear();
    fc::VelocityNet net = fc::acquire_model(fresh);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = (std::filesystem::path(cfg.out_dir) / "model.fck").string();
    fc::save_checkpoint(net, path);
    std::printf("checkpoint written: %s\n", path.c_str());
    return 0;
}

int run_compare(const fc::RunConfig& cfg) {
    fc::VelocityNet net = fc::acquire_model(cfg);
    fc::RunReport report = fc::compare_editors(cfg, net);
    fc::emit_report(report, cfg.out_dir);
    for (const std::string& ed : report.editors()) {
        std::printf("%-10s median consistency %.6f  median alignment %.6f\n", ed.c_str(),
                    report.median(ed, [](const fc::MetricsRow& r) { return r.consistency; }),
                    report.median(ed, [](const fc::MetricsRow& r) { return r.alignment; }));
    }
    return 0;
}

int run_ablate(const fc::RunConfig& cfg, const std::string& param, const std::string& grid_str) {
    fc::AblationParam param_id;
    std::vector<fc::AblationValue> grid;
    const std::vector<std::string> items = split_csv(grid_str);
    if (items.empty()) throw fc::config_error("ablate: empty grid");
    if (param == "lambda") {
        param_id = fc::AblationParam::lambda;
        for (const std::string& it : items) {
            fc::AblationValue v;
            v.lambda = std::stod(it);
            v.label = it;
            grid.push_back(v);
        }
    } else if (param == "steps") {
        param_id = fc::AblationParam::opt_steps;
        for (const std::string& it : items) {
            fc::AblationValue v;
            v.opt_steps = std::stoi(it);
            v.label = it;
            grid.push_back(v);
        }
    } else if (param == "cfg") {
        param_id = fc::AblationParam::cfg_scales;
        for (const std::string& it : items) {
            const std::size_t colon = it.find(':');
            if (colon == std::string::npos)
                throw fc::config_error("ablate: cfg grid values must be src:tar, got " + it);
            fc::AblationValue v;
            v.src_cfg = std::stod(it.substr(0, colon));
            v.tar_cfg = std::stod(it.substr(colon + 1));
            v.label = it;
            grid.push_back(v);
        }
    } else {
        throw fc::config_error("ablate: unknown param " + param);
    }

    fc::VelocityNet net = fc::acquire_model(cfg);
    std::vector<fc::RunReport> reports = fc::ablate(cfg, net, param_id, grid);
    std::string combined = "value,median_consistency,median_alignment\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::filesystem::path dir =
            std::filesystem::path(cfg.out_dir) / (param + "_" + grid[i].label);
        fc::emit_report(reports[i], dir);
        const double c =
            reports[i].median("flowcycle", [](const fc::MetricsRow& r) { return r.consistency; });
        const double a =
            reports[i].median("flowcycle", [](const fc::MetricsRow& r) { return r.alignment; });
        combined += grid[i].label + "," + fc::detail::fmt17(c) + "," + fc::detail::fmt17(a) + "\n";
        std::printf("%s=%s median consistency %.6f  median alignment %.6f\n", param.c_str(),
                    grid[i].label.c_str(), c, a);
    }
    std::filesystem::create_directories(cfg.out_dir);
    fc::detail::write_file_atomic(std::filesystem::path(cfg.out_dir) / "ablation_summary.csv",
                                  combined);
    return 0;
}

int run_transfer(const fc::RunConfig& cfg) {
    fc::VelocityNet net = fc::acquire_model(cfg);
    fc::RunReport report = fc::transfer_experiment(cfg, net);
    fc::emit_report(report, cfg.out_dir);
    for (const std::string& ed : report.editors())
        std::printf("%-10s median consistency %.6f\n", ed.c_str(),
                    report.median(ed, [](const fc::MetricsRow& r) { return r.consistency; }));
    return 0;
}

int run_probe(const fc::RunConfig& cfg) {
    fc::VelocityNet net = fc::acquire_model(cfg);
    fc::ProbeReport report = fc::corruption_probe(cfg, net);
    fc::emit_probe_report(report, cfg.out_dir);
    std::printf("probe report written to %s\n", cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FlowCycle toy laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "experiment seed");

    auto* cmd_train = app.add_subcommand("train", "train a model and write a checkpoint");
    auto* cmd_compare = app.add_subcommand("compare", "run all enabled editors on seeded tasks");
    auto* cmd_ablate = app.add_subcommand("ablate", "sweep one flowcycle parameter");
    auto* cmd_transfer = app.add_subcommand("transfer", "noise-transfer generalization study");
    auto* cmd_probe = app.add_subcommand("probe", "null-condition corruption probe");

    std::string ablate_param, ablate_grid;
    cmd_ablate->add_option("--param", ablate_param, "lambda|steps|cfg")->required();
    cmd_ablate->add_option("--grid", ablate_grid, "comma-separated values (cfg: src:tar pairs)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const fc::RunConfig cfg = load_run_config(config_path, out_dir, seed);
        if (cmd_train->parsed()) return run_train(cfg);
        if (cmd_compare->parsed()) return run_compare(cfg);
        if (cmd_ablate->parsed()) return run_ablate(cfg, ablate_param, ablate_grid);
        if (cmd_transfer->parsed()) return run_transfer(cfg);
        if (cmd_probe->parsed()) return run_probe(cfg);
    } catch (const fc::config_error& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const fc::numeric_failure& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const fc::format_error& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 2;
    } catch (const fc::io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    }
    return 0;
}
