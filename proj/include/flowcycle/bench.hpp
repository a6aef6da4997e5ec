#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowcycle/config.hpp"
#include "flowcycle/editors.hpp"
#include "flowcycle/errors.hpp"
#include "flowcycle/flowmodel.hpp"
#include "flowcycle/report.hpp"
#include "flowcycle/sampler.hpp"
#include "flowcycle/worlds.hpp"

namespace flowcycle {

// Resolved experiment configuration. Defaults mirror the editing setup:
// 50-step schedule entered at step 33 (t = 0.66), guidance 3.5 / 5.5,
// lambda 0.2, 100 Adam steps at lr 0.1.
struct RunConfig {
    WorldSpec world;
    TrainConfig train;
    CycleConfig cycle;
    int grid_steps = 33;
    std::size_t task_count = 20;
    std::uint64_t seed = 0;
    std::vector<std::string> editors = {"sdedit", "ode_inv", "flowedit", "flowcycle"};
    std::size_t dataset_size = 8192;
    std::string checkpoint;  // empty = train fresh
    std::string out_dir = "out";

    double t_corrupt() const { return cycle_t_corrupt; }
    double cycle_t_corrupt = 0.66;

    static RunConfig from_config(const KeyValueConfig& kv) {
        RunConfig cfg;
        cfg.world.dim = static_cast<std::size_t>(kv.get_int("world.dim", 8));
        cfg.world.k_a = static_cast<std::size_t>(kv.get_int("world.k_a", 4));
        cfg.world.k_b = static_cast<std::size_t>(kv.get_int("world.k_b", 4));
        cfg.world.sigma = kv.get_double("world.sigma", 0.3);
        cfg.world.mean_scale = kv.get_double("world.mean_scale", 2.0);
        cfg.train.batch_size = static_cast<std::size_t>(kv.get_int("train.batch_size", 256));
        cfg.train.train_steps = static_cast<std::size_t>(kv.get_int("train.train_steps", 5000));
        cfg.train.lr = kv.get_double("train.lr", 1e-3);
        cfg.train.cond_dropout_prob = kv.get_double("train.cond_dropout_prob", 0.1);
        cfg.cycle.lambda = kv.get_double("cycle.lambda", 0.2);
        cfg.cycle.opt_steps = static_cast<int>(kv.get_int("cycle.opt_steps", 100));
        cfg.cycle.lr = kv.get_double("cycle.lr", 0.1);
        cfg.cycle.src_guidance = kv.get_double("cycle.src_guidance", 3.5);
        cfg.cycle.tar_guidance = kv.get_double("cycle.tar_guidance", 5.5);
        cfg.cycle_t_corrupt = kv.get_double("cycle.t_corrupt", 0.66);
        cfg.grid_steps = static_cast<int>(kv.get_int("cycle.grid_steps", 33));
        cfg.task_count = static_cast<std::size_t>(kv.get_int("bench.task_count", 20));
        cfg.dataset_size = static_cast<std::size_t>(kv.get_int("bench.dataset_size", 8192));
        cfg.checkpoint = kv.get_string("model.checkpoint", "");
        const std::string eds = kv.get_string("bench.editors", "sdedit,ode_inv,flowedit,flowcycle");
        cfg.editors.clear();
        std::size_t pos = 0;
        while (pos <= eds.size()) {
            std::size_t comma = eds.find(',', pos);
            if (comma == std::string::npos) comma = eds.size();
            const std::string ed = eds.substr(pos, comma - pos);
            if (!ed.empty()) cfg.editors.push_back(ed);
            pos = comma + 1;
        }
        cfg.validate();
        return cfg;
    }

    void validate() const {
        world.validate();
        cycle.validate();
        if (task_count < 1) throw config_error("RunConfig: task_count must be >= 1");
        if (editors.empty()) throw config_error("RunConfig: editors must be nonempty");
        if (grid_steps < 1) throw config_error("RunConfig: grid_steps must be >= 1");
        if (cycle_t_corrupt <= 0.0 || cycle_t_corrupt > 1.0)
            throw config_error("RunConfig: t_corrupt outside (0,1]");
        if (world.k_a < 2) throw config_error("RunConfig: editing needs world.k_a >= 2");
        for (const std::string& ed : editors)
            if (ed != "sdedit" && ed != "ode_inv" && ed != "flowedit" && ed != "flowcycle")
                throw config_error("RunConfig: unknown editor: " + ed);
    }

    KeyValueConfig resolved() const {
        KeyValueConfig kv;
        kv.set("world.dim", std::to_string(world.dim));
        kv.set("world.k_a", std::to_string(world.k_a));
        kv.set("world.k_b", std::to_string(world.k_b));
        kv.set("world.sigma", detail::fmt17(world.sigma));
        kv.set("world.mean_scale", detail::fmt17(world.mean_scale));
        kv.set("train.batch_size", std::to_string(train.batch_size));
        kv.set("train.train_steps", std::to_string(train.train_steps));
        kv.set("train.lr", detail::fmt17(train.lr));
        kv.set("train.cond_dropout_prob", detail::fmt17(train.cond_dropout_prob));
        kv.set("cycle.lambda", detail::fmt17(cycle.lambda));
        kv.set("cycle.opt_steps", std::to_string(cycle.opt_steps));
        kv.set("cycle.lr", detail::fmt17(cycle.lr));
        kv.set("cycle.src_guidance", detail::fmt17(cycle.src_guidance));
        kv.set("cycle.tar_guidance", detail::fmt17(cycle.tar_guidance));
        kv.set("cycle.t_corrupt", detail::fmt17(cycle_t_corrupt));
        kv.set("cycle.grid_steps", std::to_string(grid_steps));
        kv.set("bench.task_count", std::to_string(task_count));
        kv.set("bench.dataset_size", std::to_string(dataset_size));
        kv.set("model.checkpoint", checkpoint);
        std::string eds;
        for (const std::string& ed : editors) eds += (eds.empty() ? "" : ",") + ed;
        kv.set("bench.editors", eds);
        kv.set("seed", std::to_string(seed));
        return kv;
    }
};

struct BenchTask {
    EditTask task;
    std::uint64_t id = 0;
    int pattern = 0;  // index into the (a_src, a_tar, b) pattern list
};

// Seeded task generation: a_src != a_tar drawn uniformly, b shared
// between source and target (the "change object, keep background"
// archetype). Patterns repeat across tasks so transfer experiments can
// pair tasks with matching and mismatching edit patterns.
inline std::vector<BenchTask> make_tasks(const RunConfig& cfg) {
    RngStream pattern_stream = RngStream(cfg.seed).substream(0x7461736b, 1);
    const std::size_t n_patterns = std::max<std::size_t>(2, cfg.task_count / 2);
    struct Pattern {
        int a_src, a_tar, b;
    };
    std::vector<Pattern> patterns;
    for (std::size_t p = 0; p < n_patterns; ++p) {
        const int a_src = static_cast<int>(pattern_stream.next_below(cfg.world.k_a));
        int a_tar = static_cast<int>(pattern_stream.next_below(cfg.world.k_a - 1));
        if (a_tar >= a_src) ++a_tar;
        const int b = static_cast<int>(pattern_stream.next_below(cfg.world.k_b));
        patterns.push_back({a_src, a_tar, b});
    }
    // Transfer needs at least two distinct patterns.
    if (n_patterns >= 2 && patterns[0].a_src == patterns[1].a_src &&
        patterns[0].a_tar == patterns[1].a_tar) {
        patterns[1].a_src = patterns[0].a_tar;
        patterns[1].a_tar = patterns[0].a_src;
    }

    const TimeGrid grid = make_time_grid(cfg.grid_steps, cfg.cycle_t_corrupt);
    std::vector<BenchTask> out;
    out.reserve(cfg.task_count);
    for (std::size_t i = 0; i < cfg.task_count; ++i) {
        const Pattern& p = patterns[i % n_patterns];
        RngStream s = RngStream(cfg.seed).substream(0x736f7572, i);
        const Condition c_src = Condition::pair(p.a_src, p.b);
        std::vector<double> mu = cfg.world.mean_for(c_src);
        std::vector<double> x(cfg.world.dim);
        for (std::size_t j = 0; j < cfg.world.dim; ++j)
            x[j] = mu[j] + cfg.world.sigma * s.next_normal();
        BenchTask bt;
        bt.task = EditTask{Tensor({cfg.world.dim}, std::move(x)), c_src,
                           Condition::pair(p.a_tar, p.b), cfg.cycle_t_corrupt, grid};
        bt.id = i;
        bt.pattern = static_cast<int>(i % n_patterns);
        out.push_back(std::move(bt));
    }
    return out;
}

// Loads the configured checkpoint, or trains a fresh model
// deterministically from the run seed when none is configured.
inline VelocityNet acquire_model(const RunConfig& cfg) {
    if (!cfg.checkpoint.empty()) {
        if (!std::filesystem::exists(cfg.checkpoint))
            throw config_error("checkpoint not found: " + cfg.checkpoint);
        VelocityNet net = load_checkpoint(cfg.checkpoint);
        if (net.data_dim() != cfg.world.dim || net.k_a() != cfg.world.k_a ||
            net.k_b() != cfg.world.k_b)
            throw config_error("checkpoint does not match world: " + cfg.checkpoint);
        return net;
    }
    VelocityNet net = VelocityNet::with_defaults(cfg.world.dim, cfg.world.k_a, cfg.world.k_b,
                                                 RngStream::mix(cfg.seed, 0x6e6574));
    RngStream data_stream = RngStream(cfg.seed).substream(0x64617461);
    std::vector<LabeledPoint> dataset = sample_dataset(cfg.world, cfg.dataset_size, data_stream);
    TrainConfig tc = cfg.train;
    tc.seed = RngStream::mix(cfg.seed, 0x747261696e);
    train(net, dataset, tc);
    return net;
}

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

inline std::uint64_t editor_id(const std::string& name) {
    if (name == "sdedit") return 1;
    if (name == "ode_inv") return 2;
    if (name == "flowedit") return 3;
    if (name == "flowcycle") return 4;
    return 99;
}

}  // namespace detail

// Runs every enabled editor on every seeded task and scores both
// metrics. A failing cell is recorded as NaN and the run continues.
inline RunReport compare_editors(const RunConfig& cfg, const VelocityNet& net) {
    cfg.validate();
    std::vector<BenchTask> tasks = make_tasks(cfg);
    RunReport report;
    const KeyValueConfig resolved = cfg.resolved();
    report.config_hash = resolved.hash();
    report.resolved_config = resolved.serialize();
    for (const BenchTask& bt : tasks) {
        for (const std::string& editor : cfg.editors) {
            MetricsRow row;
            row.task_id = bt.id;
            row.editor = editor;
            row.seed = cfg.seed;
            row.lambda = cfg.cycle.lambda;
            row.opt_steps = cfg.cycle.opt_steps;
            row.src_cfg = cfg.cycle.src_guidance;
            row.tar_cfg = cfg.cycle.tar_guidance;
            RngStream stream =
                RngStream(cfg.seed).substream(bt.id, detail::editor_id(editor));
            const auto t0 = std::chrono::steady_clock::now();
            try {
                Tensor edit;
                if (editor == "sdedit") {
                    edit = sdedit_edit(bt.task, net, stream, cfg.cycle.tar_guidance);
                } else if (editor == "ode_inv") {
                    edit = ode_inversion_edit(bt.task, net, cfg.cycle.src_guidance,
                                              cfg.cycle.tar_guidance);
                } else if (editor == "flowedit") {
                    edit = flowedit_edit(bt.task, net, stream, cfg.cycle.src_guidance,
                                         cfg.cycle.tar_guidance);
                } else {
                    CycleConfig cc = cfg.cycle;
                    cc.seed = stream.next_u64();
                    auto [pair, history] = flowcycle_optimize(bt.task, net, cc);
                    edit = flowcycle_edit(bt.task, net, pair.eps_src, cfg.cycle.tar_guidance);
                    if (!history.empty()) {
                        row.l_rec = history.back().l_rec;
                        row.l_align = history.back().l_align;
                    }
                }
                row.consistency = consistency_metric(edit, bt.task.x0_src, cfg.world);
                row.alignment = alignment_metric(edit, bt.task.c_tar, cfg.world);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "task %llu editor %s failed: %s\n",
                             static_cast<unsigned long long>(bt.id), editor.c_str(), e.what());
                row.consistency = std::nan("");
                row.alignment = std::nan("");
            }
            row.runtime_ms = detail::elapsed_ms(t0);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

enum class AblationParam { lambda, opt_steps, cfg_scales };

struct AblationValue {
    double lambda = 0.2;
    int opt_steps = 100;
    double src_cfg = 3.5;
    double tar_cfg = 5.5;
    std::string label;
};

// Sweeps exactly one parameter of the flowcycle editor, all else held
// fixed. The opt_steps sweep reuses a single optimization run per task
// and snapshots the noise at each requested step count (the Adam
// trajectory of a shorter run is a prefix of the longer one).
inline std::vector<RunReport> ablate(const RunConfig& cfg, const VelocityNet& net,
                                     AblationParam param,
                                     const std::vector<AblationValue>& grid) {
    cfg.validate();
    if (grid.empty()) throw config_error("ablate: empty grid");
    for (const AblationValue& v : grid) {
        if (param == AblationParam::lambda && v.lambda < 0.0)
            throw config_error("ablate: lambda must be >= 0");
        if (param == AblationParam::opt_steps && v.opt_steps < 0)
            throw config_error("ablate: opt_steps must be >= 0");
        if (param == AblationParam::cfg_scales && (v.src_cfg < 0.0 || v.tar_cfg < 0.0))
            throw config_error("ablate: guidance scales must be >= 0");
    }
    std::vector<BenchTask> tasks = make_tasks(cfg);
    std::vector<RunReport> reports(grid.size());
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        RunConfig sub = cfg;
        if (param == AblationParam::lambda) sub.cycle.lambda = grid[gi].lambda;
        if (param == AblationParam::opt_steps) sub.cycle.opt_steps = grid[gi].opt_steps;
        if (param == AblationParam::cfg_scales) {
            sub.cycle.src_guidance = grid[gi].src_cfg;
            sub.cycle.tar_guidance = grid[gi].tar_cfg;
        }
        const KeyValueConfig resolved = sub.resolved();
        reports[gi].config_hash = resolved.hash();
        reports[gi].resolved_config = resolved.serialize();
    }

    if (param == AblationParam::opt_steps) {
        int max_steps = 0;
        for (const AblationValue& v : grid) max_steps = std::max(max_steps, v.opt_steps);
        for (const BenchTask& bt : tasks) {
            CycleConfig cc = cfg.cycle;
            cc.opt_steps = max_steps;
            RngStream stream = RngStream(cfg.seed).substream(bt.id, detail::editor_id("flowcycle"));
            cc.seed = stream.next_u64();
            std::vector<Tensor> snapshots(grid.size());
            auto [pair, history] = flowcycle_optimize(
                bt.task, net, cc, [&](int step, const NoisePair& p) {
                    for (std::size_t gi = 0; gi < grid.size(); ++gi)
                        if (grid[gi].opt_steps == step) snapshots[gi] = p.eps_src.detach();
                });
            for (std::size_t gi = 0; gi < grid.size(); ++gi) {
                const auto t0 = std::chrono::steady_clock::now();
                Tensor edit =
                    flowcycle_edit(bt.task, net, snapshots[gi], cfg.cycle.tar_guidance);
                MetricsRow row;
                row.task_id = bt.id;
                row.editor = "flowcycle";
                row.seed = cfg.seed;
                row.lambda = cfg.cycle.lambda;
                row.opt_steps = grid[gi].opt_steps;
                row.src_cfg = cfg.cycle.src_guidance;
                row.tar_cfg = cfg.cycle.tar_guidance;
                row.consistency = consistency_metric(edit, bt.task.x0_src, cfg.world);
                row.alignment = alignment_metric(edit, bt.task.c_tar, cfg.world);
                if (grid[gi].opt_steps > 0 &&
                    static_cast<std::size_t>(grid[gi].opt_steps) <= history.size()) {
                    row.l_rec = history[grid[gi].opt_steps - 1].l_rec;
                    row.l_align = history[grid[gi].opt_steps - 1].l_align;
                }
                row.runtime_ms = detail::elapsed_ms(t0);
                reports[gi].rows.push_back(std::move(row));
            }
        }
        return reports;
    }

    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        RunConfig sub = cfg;
        sub.editors = {"flowcycle"};
        if (param == AblationParam::lambda) sub.cycle.lambda = grid[gi].lambda;
        if (param == AblationParam::cfg_scales) {
            sub.cycle.src_guidance = grid[gi].src_cfg;
            sub.cycle.tar_guidance = grid[gi].tar_cfg;
        }
        RunReport r = compare_editors(sub, net);
        reports[gi].rows = std::move(r.rows);
    }
    return reports;
}

// Evaluates flowcycle_edit under four noise sources per task: the
// task's own optimized noise, a noise optimized on a matching-pattern
// task, one from a mismatching pattern, and a fresh Gaussian.
inline RunReport transfer_experiment(const RunConfig& cfg, const VelocityNet& net) {
    cfg.validate();
    std::vector<BenchTask> tasks = make_tasks(cfg);
    RunReport report;
    const KeyValueConfig resolved = cfg.resolved();
    report.config_hash = resolved.hash();
    report.resolved_config = resolved.serialize();

    std::vector<Tensor> optimized(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        CycleConfig cc = cfg.cycle;
        RngStream stream = RngStream(cfg.seed).substream(tasks[i].id, detail::editor_id("flowcycle"));
        cc.seed = stream.next_u64();
        auto [pair, history] = flowcycle_optimize(tasks[i].task, net, cc);
        optimized[i] = pair.eps_src.detach();
    }

    auto partner = [&](std::size_t i, bool same_pattern) -> std::optional<std::size_t> {
        for (std::size_t k = 1; k < tasks.size(); ++k) {
            const std::size_t j = (i + k) % tasks.size();
            if ((tasks[j].pattern == tasks[i].pattern) == same_pattern) return j;
        }
        return std::nullopt;
    };

    for (std::size_t i = 0; i < tasks.size(); ++i) {
        struct Source {
            const char* name;
            std::optional<Tensor> eps;
        };
        std::optional<std::size_t> match = partner(i, true);
        std::optional<std::size_t> mismatch = partner(i, false);
        RngStream rnd = RngStream(cfg.seed).substream(tasks[i].id, 10);
        std::vector<Source> sources;
        sources.push_back({"optimized", optimized[i]});
        sources.push_back({"match", match ? std::optional<Tensor>(optimized[*match]) : std::nullopt});
        sources.push_back(
            {"mismatch", mismatch ? std::optional<Tensor>(optimized[*mismatch]) : std::nullopt});
        sources.push_back({"random", rng_normal(rnd, tasks[i].task.x0_src.shape())});
        for (const Source& src : sources) {
            if (!src.eps) continue;
            MetricsRow row;
            row.task_id = tasks[i].id;
            row.editor = src.name;
            row.seed = cfg.seed;
            row.lambda = cfg.cycle.lambda;
            row.opt_steps = cfg.cycle.opt_steps;
            row.src_cfg = cfg.cycle.src_guidance;
            row.tar_cfg = cfg.cycle.tar_guidance;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                Tensor edit = flowcycle_edit(tasks[i].task, net, *src.eps, cfg.cycle.tar_guidance);
                row.consistency = consistency_metric(edit, tasks[i].task.x0_src, cfg.world);
                row.alignment = alignment_metric(edit, tasks[i].task.c_tar, cfg.world);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "transfer task %zu source %s failed: %s\n", i, src.name,
                             e.what());
                row.consistency = std::nan("");
                row.alignment = std::nan("");
            }
            row.runtime_ms = detail::elapsed_ms(t0);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

// Per-block deviation of the null-condition denoising of an
// intermediate state from the source point.
struct ProbeResult {
    double relevant_dev = 0.0;
    double irrelevant_dev = 0.0;
};

template <VelocityField F>
ProbeResult corruption_probe_one(const F& net, const WorldSpec& world, const EditTask& task,
                                 const Tensor& eps) {
    if (eps.size() != task.x0_src.size())
        throw std::invalid_argument("corruption_probe: noise dimension mismatch");
    Tensor x_t = interpolate(task.x0_src.detach(), eps.detach(), task.t_corrupt);
    Tensor probe = euler_denoise(net, x_t, task.grid, {0.0, task.c_tar});
    ProbeResult r;
    for (std::size_t j = 0; j < world.relevant_dim(); ++j) {
        const double d = probe.values()[j] - task.x0_src.values()[j];
        r.relevant_dev += d * d;
    }
    r.relevant_dev /= static_cast<double>(world.relevant_dim());
    for (std::size_t j = world.relevant_dim(); j < world.dim; ++j) {
        const double d = probe.values()[j] - task.x0_src.values()[j];
        r.irrelevant_dev += d * d;
    }
    r.irrelevant_dev /= static_cast<double>(world.irrelevant_dim());
    return r;
}

struct ProbeRow {
    std::uint64_t task_id;
    ProbeResult optimized;
    ProbeResult random;
};

struct ProbeReport {
    std::vector<ProbeRow> rows;
    std::uint64_t config_hash = 0;
    std::string resolved_config;
};

// Appendix-style target-aware corruption check: denoise both the
// optimized and a random intermediate state under the null condition
// and compare per-block deviations from the source.
inline ProbeReport corruption_probe(const RunConfig& cfg, const VelocityNet& net) {
    cfg.validate();
    std::vector<BenchTask> tasks = make_tasks(cfg);
    ProbeReport report;
    const KeyValueConfig resolved = cfg.resolved();
    report.config_hash = resolved.hash();
    report.resolved_config = resolved.serialize();
    for (const BenchTask& bt : tasks) {
        CycleConfig cc = cfg.cycle;
        RngStream stream = RngStream(cfg.seed).substream(bt.id, detail::editor_id("flowcycle"));
        cc.seed = stream.next_u64();
        auto [pair, history] = flowcycle_optimize(bt.task, net, cc);
        RngStream rnd = RngStream(cfg.seed).substream(bt.id, 20);
        Tensor eps_random = rng_normal(rnd, bt.task.x0_src.shape());
        ProbeRow row;
        row.task_id = bt.id;
        row.optimized = corruption_probe_one(net, cfg.world, bt.task, pair.eps_src);
        row.random = corruption_probe_one(net, cfg.world, bt.task, eps_random);
        report.rows.push_back(row);
    }
    return report;
}

inline std::string probe_csv(const ProbeReport& report) {
    std::string out =
        "task_id,optimized_relevant_dev,optimized_irrelevant_dev,"
        "random_relevant_dev,random_irrelevant_dev\n";
    for (const ProbeRow& r : report.rows) {
        out += std::to_string(r.task_id) + "," + detail::fmt17(r.optimized.relevant_dev) + "," +
               detail::fmt17(r.optimized.irrelevant_dev) + "," +
               detail::fmt17(r.random.relevant_dev) + "," +
               detail::fmt17(r.random.irrelevant_dev) + "\n";
    }
    return out;
}

inline void emit_probe_report(const ProbeReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output dir: " + dir.string());
    detail::write_file_atomic(dir / "probe.csv", probe_csv(report));
    detail::write_file_atomic(dir / "config.txt", report.resolved_config);
}

}  // namespace flowcycle
