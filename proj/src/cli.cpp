#include "nexus/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "nexus/autodiff.hpp"
#include "nexus/bench.hpp"
#include "nexus/io.hpp"
#include "nexus/kernels.hpp"
#include "nexus/model.hpp"
#include "nexus/taped_attention.hpp"
#include "nexus/theory.hpp"

namespace fs = std::filesystem;

namespace nexus {

namespace {

// ---- config file ---------------------------------------------------------

struct Settings {
    ModelConfig model;
    TrainOptions train;
    std::string corpus_path;
    std::size_t eval_windows = 64;
    bool formulation_set = false;
};

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::int64_t n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ContractError("config value for '" + key + "' is not an integer: '" + v + "'");
    }
}

double parse_num(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ContractError("config value for '" + key + "' is not a number: '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ContractError("config value for '" + key + "' is not a boolean: '" + v + "'");
}

void apply_kv(Settings& s, const std::string& key, const std::string& value) {
    auto as_int = [&] { return static_cast<int>(parse_int(key, value)); };
    if (key == "d_model") s.model.d_model = as_int();
    else if (key == "num_layers") s.model.num_layers = as_int();
    else if (key == "num_heads") s.model.num_heads = as_int();
    else if (key == "context_length") s.model.context_length = as_int();
    else if (key == "mlp_mult") s.model.mlp_mult = as_int();
    else if (key == "seed") s.model.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "order") s.model.attention.order = as_int();
    else if (key == "ho_projections") s.model.attention.ho = ProjSet::parse(value);
    else if (key == "weight_shared") s.model.attention.weight_shared = parse_bool(key, value);
    else if (key == "inner_formulation") {
        if (value == "self" || value == "self_on_projection")
            s.model.attention.inner_formulation = InnerFormulation::SELF_ON_PROJECTION;
        else if (value == "full" || value == "full_then_project")
            s.model.attention.inner_formulation = InnerFormulation::FULL_THEN_PROJECT;
        else
            throw ContractError("config value for 'inner_formulation' must be self or full, got '" +
                                value + "'");
        s.formulation_set = true;
    } else if (key == "causal") s.model.attention.causal = parse_bool(key, value);
    else if (key == "steps") s.train.steps = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "batch_size") s.train.batch_size = static_cast<std::size_t>(parse_int(key, value));
    else if (key == "lr") s.train.lr = parse_num(key, value);
    else if (key == "warmup_steps") s.train.warmup_steps = as_int();
    else if (key == "beta1") s.train.beta1 = parse_num(key, value);
    else if (key == "beta2") s.train.beta2 = parse_num(key, value);
    else if (key == "adam_eps") s.train.adam_eps = parse_num(key, value);
    else if (key == "clip_norm") s.train.clip_norm = parse_num(key, value);
    else if (key == "corpus") s.corpus_path = value;
    else if (key == "eval_windows") s.eval_windows = static_cast<std::size_t>(parse_int(key, value));
    else throw ContractError("unknown config key: '" + key + "'");
}

std::string trim(std::string s) {
    const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && issp(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
    while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

void apply_config_text(Settings& s, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError("config line missing '=': '" + line + "'");
        apply_kv(s, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

Settings load_settings(const std::string& config_path, const std::vector<std::string>& sets,
                       bool seed_set, std::uint64_t seed) {
    Settings s;
    if (!config_path.empty()) apply_config_text(s, read_file(config_path));
    for (const std::string& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ContractError("--set expects KEY=VALUE, got '" + kv + "'");
        apply_kv(s, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (seed_set) s.model.seed = seed;
    // Unshared inner mechanisms refine the projected stream unless the config
    // explicitly picks the full-then-project formulation; shared ones must
    // share the outer projections, which only types in full-then-project.
    if (!s.model.attention.weight_shared && !s.formulation_set)
        s.model.attention.inner_formulation = InnerFormulation::SELF_ON_PROJECTION;
    s.model.sync_attention();
    s.model.validate();
    return s;
}

std::string default_checkpoint(const std::string& out_dir, const std::string& flag) {
    return flag.empty() ? out_dir + "/model.nxsc" : flag;
}

std::ostream& num17(std::ostream& os) { return os << std::setprecision(17); }

// ---- train / eval --------------------------------------------------------

int cmd_train(const Settings& s, const std::string& out_dir, bool force,
              std::int64_t steps_override, const std::string& init_from, std::ostream& out) {
    contract(!s.corpus_path.empty(), "train: config key 'corpus' (path to training text) is required");
    const std::string corpus = read_file(s.corpus_path);
    TrainOptions opts = s.train;
    if (steps_override >= 0) opts.steps = static_cast<std::uint64_t>(steps_override);

    const std::string ckpt = out_dir + "/model.nxsc";
    if (fs::exists(ckpt) && !force)
        throw ContractError("train: checkpoint exists: " + ckpt + " (pass --force to overwrite)");

    TrainState st = init_from.empty() ? init_state(s.model) : load_checkpoint(init_from, s.model);
    std::vector<MetricsRow> metrics;
    train(st, corpus, opts, metrics);
    write_file_atomic(out_dir + "/metrics.csv", metrics_csv(metrics));
    save_checkpoint(st, ckpt);

    out << "trained " << metrics.size() << " steps";
    if (!metrics.empty()) out << ", final loss " << std::setprecision(6) << metrics.back().loss;
    out << "; wrote " << ckpt << " and metrics.csv\n";
    return 0;
}

int cmd_eval(const Settings& s, const std::string& out_dir, const std::string& ckpt_flag,
             std::ostream& out) {
    contract(!s.corpus_path.empty(), "eval: config key 'corpus' is required");
    const std::string corpus = read_file(s.corpus_path);
    const TrainState st = load_checkpoint(default_checkpoint(out_dir, ckpt_flag), s.model);

    // Held-out split: the final 10% of the corpus.
    const std::string tail = corpus.substr(corpus.size() - corpus.size() / 10);
    contract(tail.size() >= static_cast<std::size_t>(st.config.context_length) + 1,
             "eval: held-out split smaller than one context window");
    Rng rng(st.config.seed ^ 0x5eedf00dULL);
    const double loss = eval_loss(st, tail, s.eval_windows, rng);
    const double ppl = std::exp(loss);

    std::ostringstream line;
    line << "eval: windows=" << s.eval_windows << " loss=" << std::setprecision(10) << loss
         << " perplexity=" << ppl << "\n";
    write_file_atomic(out_dir + "/eval.txt", line.str());
    out << line.str();
    return 0;
}

// ---- viz -----------------------------------------------------------------

std::string matrix_csv(const Matrix& m) {
    std::ostringstream ss;
    num17(ss);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) ss << (j ? "," : "") << m(i, j);
        ss << '\n';
    }
    return std::move(ss).str();
}

// 8-bit binary PGM, each row scaled by its own max so causal rows stay
// comparable despite their different support sizes.
std::string matrix_pgm(const Matrix& m) {
    std::string s = "P5\n" + std::to_string(m.cols) + " " + std::to_string(m.rows) + "\n255\n";
    for (std::size_t i = 0; i < m.rows; ++i) {
        double rm = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) rm = std::max(rm, m(i, j));
        for (std::size_t j = 0; j < m.cols; ++j) {
            const long v = rm > 0.0 ? std::lround(255.0 * m(i, j) / rm) : 0;
            s.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0l, 255l))));
        }
    }
    return s;
}

int cmd_viz(const Settings& s, const std::string& out_dir, const std::string& ckpt_flag,
            const std::string& text, int layer, int head, const std::string& maps_flag,
            std::ostream& out) {
    contract(!text.empty(), "viz: --text must be non-empty");
    const TrainState st = load_checkpoint(default_checkpoint(out_dir, ckpt_flag), s.model);
    const ModelConfig& cfg = st.config;
    contract(layer >= -1 && layer < cfg.num_layers, "viz: --layer out of range");
    contract(head >= -1 && head < cfg.num_heads, "viz: --head out of range");

    std::vector<int> ids = tokenize_bytes(text);
    if (ids.size() > static_cast<std::size_t>(cfg.context_length))
        ids.resize(static_cast<std::size_t>(cfg.context_length));
    Batch b;
    b.batch = 1;
    b.n = ids.size();
    b.inputs = ids;
    b.targets.assign(ids.size(), 0);

    std::vector<std::vector<AttentionTrace>> traces;
    (void)forward_lm(st, b, &traces);

    // Map selection: by default everything the model produces. An explicit
    // request for a map the model cannot produce is a usage error.
    std::vector<std::string> wanted;
    if (maps_flag == "auto") {
        wanted.push_back("outer");
        if (cfg.attention.order > 1 && cfg.attention.ho.q) wanted.push_back("inner_q");
        if (cfg.attention.order > 1 && cfg.attention.ho.k) wanted.push_back("inner_k");
    } else {
        std::istringstream ms(maps_flag);
        std::string item;
        while (std::getline(ms, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            contract(item == "outer" || item == "inner_q" || item == "inner_k",
                     "viz: --maps entries must be outer, inner_q or inner_k");
            if (item != "outer") {
                contract(cfg.attention.order > 1, "viz: no inner maps at order 1");
                const bool refined = item == "inner_q" ? cfg.attention.ho.q : cfg.attention.ho.k;
                contract(refined, "viz: this model does not refine that projection (" + item + ")");
            }
            wanted.push_back(item);
        }
        contract(!wanted.empty(), "viz: --maps selected nothing");
    }

    std::string summary;
    for (const std::string& kind : wanted) {
        // Figure-style averaging: across selected layers, heads and, for the
        // inner chains, recursion levels.
        Matrix avg(b.n, b.n, 0.0);
        std::size_t count = 0;
        for (int l = 0; l < cfg.num_layers; ++l) {
            if (layer != -1 && l != layer) continue;
            for (int h = 0; h < cfg.num_heads; ++h) {
                if (head != -1 && h != head) continue;
                const AttentionTrace& tr = traces[static_cast<std::size_t>(l)]
                                                 [static_cast<std::size_t>(h)];
                if (kind == "outer") {
                    avg = add(avg, tr.outer);
                    ++count;
                } else {
                    const auto& chain = kind == "inner_q" ? tr.inner_q : tr.inner_k;
                    for (const Matrix& m : chain) {
                        avg = add(avg, m);
                        ++count;
                    }
                }
            }
        }
        contract(count > 0, "viz: selection produced no " + kind + " maps");
        avg = scaled(avg, 1.0 / static_cast<double>(count));

        double diag = 0.0, first = 0.0;
        for (std::size_t i = 0; i < avg.rows; ++i) {
            diag += avg(i, i);
            first += avg(i, 0);
        }
        diag /= static_cast<double>(avg.rows);
        first /= static_cast<double>(avg.rows);

        write_file_atomic(out_dir + "/viz_" + kind + ".csv", matrix_csv(avg));
        write_file_atomic(out_dir + "/viz_" + kind + ".pgm", matrix_pgm(avg));
        std::ostringstream line;
        line << kind << ": n=" << avg.rows << " maps_averaged=" << count
             << std::setprecision(6) << " diag_mass=" << diag << " first_col_mass=" << first
             << " (pgm rows scaled by per-row max)\n";
        summary += line.str();
    }
    write_file_atomic(out_dir + "/viz_summary.txt", summary);
    out << summary;
    return 0;
}

// ---- theory / bench / gradcheck -------------------------------------------

int cmd_theory(std::size_t n, std::size_t d, int d_k, int trials, std::uint64_t seed,
               const std::string& out_dir, std::ostream& out) {
    const TheorySuite suite = run_theory_suite(n, d, d_k, trials, seed);
    write_file_atomic(out_dir + "/theory.csv", suite.csv);
    out << suite.csv;
    if (!suite.ok)
        throw NumericalError("theory: at least one acceptance inequality failed (see theory.csv)");
    return 0;
}

int cmd_bench(const std::string& sizes_flag, int repeats, std::uint64_t seed,
              const std::string& out_dir, std::ostream& out) {
    std::vector<std::size_t> sizes;
    std::istringstream ss(sizes_flag);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) sizes.push_back(static_cast<std::size_t>(parse_int("--sizes", item)));
    }

    std::vector<std::pair<NexusConfig, std::size_t>> grid;
    for (const std::size_t n : sizes) {
        for (const int order : {1, 2, 3}) {
            NexusConfig base;
            base.order = order;
            if (order > 1) base.ho = ProjSet::parse("qk");
            base.causal = true;
            base.num_heads = 2;
            base.d_model = 64;
            base.d_k = 32;
            if (order == 1) {
                grid.emplace_back(base, n);
                continue;
            }
            NexusConfig shared = base;
            shared.weight_shared = true;
            shared.inner_formulation = InnerFormulation::FULL_THEN_PROJECT;
            grid.emplace_back(shared, n);
            NexusConfig unshared = base;
            unshared.weight_shared = false;
            unshared.inner_formulation = InnerFormulation::SELF_ON_PROJECTION;
            grid.emplace_back(unshared, n);
        }
    }

    const std::vector<BenchRow> rows = run_bench(grid, repeats, seed);
    const std::string csv = bench_csv(rows);
    write_file_atomic(out_dir + "/bench.csv", csv);
    out << csv;
    return 0;
}

struct GradCase {
    std::string name;
    NexusConfig cfg;
};

std::vector<GradCase> gradcheck_grid() {
    std::vector<GradCase> cases;
    NexusConfig base;
    base.causal = true;
    base.num_heads = 1;
    base.d_model = 6;
    base.d_k = 6;

    NexusConfig plain = base;
    plain.order = 1;
    cases.push_back({"order1", plain});
    for (const int order : {2, 3}) {
        for (const std::string ho : {"qk", "qkv"}) {
            NexusConfig c = base;
            c.order = order;
            c.ho = ProjSet::parse(ho);
            c.weight_shared = true;
            c.inner_formulation = InnerFormulation::FULL_THEN_PROJECT;
            cases.push_back({"order" + std::to_string(order) + "_" + ho + "_shared_full", c});
            c.weight_shared = false;
            cases.push_back({"order" + std::to_string(order) + "_" + ho + "_unshared_full", c});
            c.inner_formulation = InnerFormulation::SELF_ON_PROJECTION;
            cases.push_back({"order" + std::to_string(order) + "_" + ho + "_unshared_self", c});
        }
    }
    return cases;
}

int cmd_gradcheck(const std::string& out_dir, std::uint64_t seed, std::ostream& out) {
    const std::size_t n = 5;
    std::ostringstream report;
    double worst = 0.0;
    for (const GradCase& gc : gradcheck_grid()) {
        Rng rng(seed ^ std::hash<std::string>{}(gc.name));
        const AttentionParams p = init_attention_params(gc.cfg, rng, 0.4);
        const Matrix x = gaussian_matrix(rng, n, static_cast<std::size_t>(gc.cfg.d_model), 0.5);
        const Matrix w = gaussian_matrix(rng, n, static_cast<std::size_t>(gc.cfg.d_k), 1.0);

        std::vector<Matrix> params = {p.w_q, p.w_k, p.w_v};
        for (const InnerTheta& t : p.inner) {
            params.push_back(t.w_q);
            params.push_back(t.w_k);
            params.push_back(t.w_v);
        }
        const NexusConfig cfg = gc.cfg;
        const std::vector<InnerTheta> inner_layout = p.inner;
        auto build = [x, w, cfg, inner_layout](Tape& t, const std::vector<Var>& vs) {
            TapedAttentionParams tp;
            tp.w_q = vs[0];
            tp.w_k = vs[1];
            tp.w_v = vs[2];
            for (std::size_t i = 0; i < inner_layout.size(); ++i) {
                TapedAttentionParams::Inner in;
                in.level = inner_layout[i].level;
                in.proj = inner_layout[i].proj;
                in.w_q = vs[3 + 3 * i];
                in.w_k = vs[4 + 3 * i];
                in.w_v = vs[5 + 3 * i];
                tp.inner.push_back(in);
            }
            const Var y = taped_nexus_attention(t, t.leaf(x, /*is_param=*/false), tp, cfg);
            return t.dot_const(y, w);
        };
        const GradCheckReport r = grad_check(gc.name, build, params, 1e-4);
        worst = std::max(worst, r.max_rel_err);
        report << gc.name << " max_rel_err=" << std::setprecision(6) << r.max_rel_err << "\n";
    }
    report << "worst=" << std::setprecision(6) << worst << " threshold=1e-5\n";
    write_file_atomic(out_dir + "/gradcheck.txt", report.str());
    out << report.str();
    return worst < 1e-5 ? 0 : 3;
}

} // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"recursive higher-order attention workbench"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::uint64_t seed = 0;
    bool force = false;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "flat key = value config file");
    app.add_option("--out", out_dir, "output directory (default: out)");
    CLI::Option* seed_opt = app.add_option("--seed", seed, "PRNG seed override");
    app.add_option("--set", sets, "KEY=VALUE config override (repeatable)");
    app.add_flag("--force", force, "allow overwriting an existing checkpoint");

    CLI::App* train_cmd = app.add_subcommand("train", "train a model, write checkpoint + metrics");
    std::int64_t steps_override = -1;
    std::string init_from;
    train_cmd->add_option("--steps", steps_override, "override config step count");
    train_cmd->add_option("--init-from", init_from, "start from an existing checkpoint");

    CLI::App* eval_cmd = app.add_subcommand("eval", "perplexity on a held-out split");
    std::string ckpt_flag;
    eval_cmd->add_option("--checkpoint", ckpt_flag, "checkpoint path (default: OUT/model.nxsc)");

    CLI::App* viz_cmd = app.add_subcommand("viz", "attention heatmaps (CSV + PGM)");
    std::string viz_ckpt, viz_text, viz_maps = "auto";
    int viz_layer = -1, viz_head = -1;
    viz_cmd->add_option("--checkpoint", viz_ckpt, "checkpoint path (default: OUT/model.nxsc)");
    viz_cmd->add_option("--text", viz_text, "input text to attend over")->required();
    viz_cmd->add_option("--layer", viz_layer, "layer selector (-1 = average all)");
    viz_cmd->add_option("--head", viz_head, "head selector (-1 = average all)");
    viz_cmd->add_option("--maps", viz_maps, "comma list of outer,inner_q,inner_k (default auto)");

    CLI::App* theory_cmd = app.add_subcommand("theory", "bottleneck verification suite");
    std::size_t th_n = 8, th_d = 3;
    int th_dk = 4, th_trials = 20;
    theory_cmd->add_option("--n", th_n, "sequence length (default 8)");
    theory_cmd->add_option("--d", th_d, "input dimension, must be < n-1 (default 3)");
    theory_cmd->add_option("--d_k", th_dk, "key dimension (default 4)");
    theory_cmd->add_option("--trials", th_trials, "random linear maps to test (default 20)");

    CLI::App* bench_cmd = app.add_subcommand("bench", "cost accounting + wall-time benchmark");
    std::string bench_sizes = "16,32,64,128";
    int bench_repeats = 7;
    bench_cmd->add_option("--sizes", bench_sizes, "comma list of sequence lengths");
    bench_cmd->add_option("--repeats", bench_repeats, "timing repeats per config (>= 5)");

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");

    for (CLI::App* sub : {train_cmd, eval_cmd, viz_cmd, theory_cmd, bench_cmd, grad_cmd})
        sub->fallthrough();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        fs::create_directories(out_dir);
        const bool seed_set = seed_opt->count() > 0;
        if (train_cmd->parsed())
            return cmd_train(load_settings(config_path, sets, seed_set, seed), out_dir, force,
                             steps_override, init_from, out);
        if (eval_cmd->parsed())
            return cmd_eval(load_settings(config_path, sets, seed_set, seed), out_dir, ckpt_flag,
                            out);
        if (viz_cmd->parsed())
            return cmd_viz(load_settings(config_path, sets, seed_set, seed), out_dir, viz_ckpt,
                           viz_text, viz_layer, viz_head, viz_maps, out);
        if (theory_cmd->parsed())
            return cmd_theory(th_n, th_d, th_dk, th_trials, seed, out_dir, out);
        if (bench_cmd->parsed()) return cmd_bench(bench_sizes, bench_repeats, seed, out_dir, out);
        if (grad_cmd->parsed()) return cmd_gradcheck(out_dir, seed, out);
        err << "error: no subcommand\n";
        return 2;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const RepresentabilityError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace nexus
