// Command-line surface over the copytrace core: pair generation, patch
// supervision, loss reports, gradient checking, retrieval metrics, and
// affinity heatmaps. Every command is deterministic given its manifest.
//
// Exit codes: 0 success, 2 usage/parameter error, 3 data/format error,
// 4 numeric failure.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "copytrace/edit_ops.hpp"
#include "copytrace/errors.hpp"
#include "copytrace/heatmap.hpp"
#include "copytrace/loss.hpp"
#include "copytrace/retrieval.hpp"
#include "copytrace/rng.hpp"
#include "copytrace/sampling.hpp"
#include "copytrace/supervision.hpp"
#include "copytrace/tokens.hpp"
#include "copytrace/toy_encoder.hpp"
#include "copytrace/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace copytrace;

namespace {

// ---- shared plumbing -----------------------------------------------------

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("COPYTRACE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

/// Static range partition; deterministic outputs require each index to
/// write only its own slot.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max(1, std::min<int>(threads, static_cast<int>(n == 0 ? 1 : n)));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::scoped_lock lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::string hex_digest(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(Rng::hash_bytes(text.data(), text.size())));
    return buf;
}

void write_manifest(const fs::path& path, const std::string& command, const json& params, const json& inputs,
                    const json& outputs) {
    json manifest;
    manifest["command"] = command;
    manifest["tool_version"] = kVersion;
    manifest["params"] = params;
    manifest["inputs"] = inputs;
    manifest["outputs"] = outputs;
    manifest["config_digest"] = hex_digest(params.dump());
    std::ofstream f(path);
    if (!f) throw ParamError("cannot write manifest: " + path.string());
    f << manifest.dump(2) << '\n';
}

std::vector<fs::path> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ParamError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ParamError("no .png files in " + dir);
    return files;
}

double parse_gamma(const std::string& text) {
    if (text == "inf" || text == "infinity") return std::numeric_limits<double>::infinity();
    try {
        std::size_t used = 0;
        const double g = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return g;
    } catch (const std::exception&) {
        throw ParamError("gamma must be a number or 'inf', got '" + text + "'");
    }
}

Eigen::VectorXd global_from_tokens(const Eigen::MatrixXd& tokens) {
    Eigen::VectorXd mean = tokens.colwise().mean().transpose();
    const double n = mean.norm();
    if (!(n > 0)) throw NumericError("token matrix has a zero-norm mean");
    return mean / n;
}

// ---- gen-pairs -----------------------------------------------------------

struct GenPairsArgs {
    std::string input_dir;
    std::string pipeline_a_path;
    std::string pipeline_b_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool keep_occluded = false;
    int threads = 0;
};

int run_gen_pairs(const GenPairsArgs& args) {
    EditPipeline pipe_a = load_pipeline(args.pipeline_a_path);
    EditPipeline pipe_b = load_pipeline(args.pipeline_b_path);
    if (args.keep_occluded) {
        pipe_a.keep_occluded = true;
        pipe_b.keep_occluded = true;
    }
    const auto inputs = list_pngs(args.input_dir);
    fs::create_directories(args.out_dir);

    parallel_for(inputs.size(), resolve_threads(args.threads), [&](std::size_t i) {
        const fs::path& png = inputs[i];
        const std::string stem = png.stem().string();
        const Image source = load_png(png.string());
        // Per-image sub-streams: the CLI seed, each pipeline's seed, and
        // the file name all feed the draw, so reruns are byte-identical
        // and images are independent.
        const std::uint64_t name_hash = Rng::hash_bytes(stem.data(), stem.size());
        const std::uint64_t seed_a = Rng::mix(args.seed ^ name_hash ^ Rng::mix(pipe_a.seed ^ 0xA));
        const std::uint64_t seed_b = Rng::mix(args.seed ^ name_hash ^ Rng::mix(pipe_b.seed ^ 0xB));
        const EditedPair pair = make_pair(source, pipe_a, pipe_b, seed_a, seed_b);

        const fs::path dir = fs::path(args.out_dir) / stem;
        fs::create_directories(dir);
        save_png(pair.image_a, (dir / "image_a.png").string());
        save_png(pair.image_b, (dir / "image_b.png").string());
        save_table(pair.table_ao, (dir / "table_ao.ptt").string());
        save_table(pair.table_bo, (dir / "table_bo.ptt").string());
        save_table(pair.table_ab, (dir / "table_ab.ptt").string());
        save_table(pair.table_ba, (dir / "table_ba.ptt").string());
    });

    json params{{"seed", args.seed}, {"keep_occluded", args.keep_occluded}};
    json in{{"input", args.input_dir}, {"pipeline_a", args.pipeline_a_path}, {"pipeline_b", args.pipeline_b_path}};
    json out{{"out", args.out_dir}, {"pairs", inputs.size()}};
    write_manifest(fs::path(args.out_dir) / "manifest.json", "gen-pairs", params, in, out);
    std::cout << "wrote " << inputs.size() << " pairs to " << args.out_dir << "\n";
    return 0;
}

// ---- supervise -----------------------------------------------------------

struct SuperviseArgs {
    std::string pair_dir;
    std::string out_path;
    std::string gamma_text = "1";
    std::string direction = "ba";
    int patch_size = 16;
};

int run_supervise(const SuperviseArgs& args) {
    const double gamma = parse_gamma(args.gamma_text);
    if (args.direction != "ba" && args.direction != "ab") throw ParamError("direction must be ba or ab");
    const fs::path table_path = fs::path(args.pair_dir) / ("table_" + args.direction + ".ptt");
    const CoordTable table = load_table(table_path.string());

    const PatchGrid grid_q(table.height(), table.width(), args.patch_size);
    const PatchGrid grid_r(table.source_height(), table.source_width(), args.patch_size);
    const Eigen::MatrixXi counts = overlap_counts(table, grid_q, grid_r);
    const auto mask = row_mask_from_counts(counts);
    const TargetDistribution targets = sharpen(prior_qhat(counts, grid_q), gamma, mask);
    save_targets(targets, args.out_path);

    double support = 0.0;
    for (Eigen::Index i = 0; i < targets.matrix.rows(); ++i) {
        support += (targets.matrix.row(i).array() > 0).count();
    }
    const int unmasked = targets.unmasked_count();
    json summary{{"query_patches", grid_q.patch_count()},
                 {"ref_patches", grid_r.patch_count()},
                 {"unmasked_rows", unmasked},
                 {"mean_support_size", unmasked > 0 ? support / unmasked : 0.0}};
    json params{{"patch_size", args.patch_size}, {"gamma", args.gamma_text}, {"direction", args.direction}};
    write_manifest(fs::path(args.out_path).string() + ".manifest.json", "supervise", params,
                   json{{"pair", args.pair_dir}}, json{{"targets", args.out_path}, {"summary", summary}});
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---- loss ------------------------------------------------------------------

struct LossArgs {
    std::string tokens_q_path;
    std::string tokens_r_path;
    std::string targets_path;
    std::string targets_rq_path; // enables the symmetric form
    std::string mode = "matcher";
    double tau = 1.0 / 16.0;
    double w_nce = -1.0; // <0 = per-mode default
    double logit = std::numeric_limits<double>::quiet_NaN();
    int label = 1;
    std::string out_path;
};

int run_loss(const LossArgs& args) {
    if (args.mode != "matcher" && args.mode != "descriptor") throw ParamError("mode must be matcher or descriptor");
    const Eigen::MatrixXd tokens_q = load_tokens(args.tokens_q_path);
    const Eigen::MatrixXd tokens_r = load_tokens(args.tokens_r_path);
    const TargetDistribution targets = load_targets(args.targets_path);
    const double w_nce = args.w_nce >= 0 ? args.w_nce : (args.mode == "matcher" ? 3.0 : 5.0);

    LossResult nce;
    if (!args.targets_rq_path.empty()) {
        const TargetDistribution targets_rq = load_targets(args.targets_rq_path);
        nce = copynce_symmetric(tokens_q, tokens_r, targets, targets_rq, args.tau);
    } else {
        nce = copynce_directional(tokens_q, tokens_r, targets, args.tau);
    }

    json components;
    json grad_norms{{"copynce_tokens_q", nce.grads[0].norm()}, {"copynce_tokens_r", nce.grads[1].norm()}};
    components["copynce"] = nce.value;

    LossResult total;
    const Eigen::VectorXd global_q = global_from_tokens(tokens_q);
    const Eigen::VectorXd global_r = global_from_tokens(tokens_r);
    if (args.mode == "matcher") {
        // Default logit: cosine of the two global descriptors.
        const double logit = std::isnan(args.logit) ? global_q.dot(global_r) : args.logit;
        const LossResult bce = bce_matcher(logit, args.label);
        components["bce"] = bce.value;
        grad_norms["bce_logit"] = bce.grads[0].norm();
        total = objective_matcher(bce, nce, w_nce);
    } else {
        // Noise set = the reference global plus every reference patch token.
        Eigen::MatrixXd noise(tokens_r.rows() + 1, tokens_r.cols());
        noise.row(0) = global_r.transpose();
        noise.bottomRows(tokens_r.rows()) = tokens_r;
        const LossResult info = infonce(global_q, global_r, noise, args.tau);
        const LossResult spread = koleo(tokens_q);
        components["infonce"] = info.value;
        components["koleo"] = spread.value;
        grad_norms["infonce_anchor"] = info.grads[0].norm();
        grad_norms["koleo_tokens"] = spread.grads[0].norm();
        total = objective_descriptor(info, spread, nce, w_nce);
    }

    json report{{"mode", args.mode},         {"value", total.value},
                {"kl", nce.kl},              {"target_entropy", nce.target_entropy},
                {"components", components},  {"grad_norms", grad_norms},
                {"tau", args.tau},           {"w_nce", w_nce}};
    std::cout << report.dump(2) << "\n";
    if (!args.out_path.empty()) {
        std::ofstream f(args.out_path);
        if (!f) throw ParamError("cannot write: " + args.out_path);
        f << report.dump(2) << '\n';
        json params{{"mode", args.mode}, {"tau", args.tau}, {"w_nce", w_nce}, {"label", args.label}};
        write_manifest(args.out_path + ".manifest.json", "loss", params,
                       json{{"tokens_q", args.tokens_q_path},
                            {"tokens_r", args.tokens_r_path},
                            {"targets", args.targets_path}},
                       json{{"report", args.out_path}});
    }
    return 0;
}

// ---- grad-check ------------------------------------------------------------

struct GradCheckArgs {
    std::string which = "all";
    double eps = 1e-5;
    double tol = 1e-4;
    std::uint64_t seed = 7;
    int fixtures = 5;
    bool inject_bug = false; // negative control: corrupt one gradient entry
};

Eigen::MatrixXd random_tokens(Rng& rng, int n, int d) {
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = rng.gaussian();
    }
    return m;
}

TargetDistribution random_targets(Rng& rng, int n_q, int n_r) {
    Eigen::MatrixXd qhat = Eigen::MatrixXd::Zero(n_q, n_r);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n_q), 1);
    for (int i = 0; i < n_q; ++i) {
        if (i == 1 && n_q > 2) { // keep one masked row in every fixture
            mask[static_cast<std::size_t>(i)] = 0;
            continue;
        }
        for (int j = 0; j < n_r; ++j) {
            if (rng.real() < 0.5) qhat(i, j) = rng.real();
        }
        if (qhat.row(i).sum() == 0) qhat(i, static_cast<int>(rng.below(static_cast<std::uint64_t>(n_r)))) = 1.0;
    }
    return sharpen(qhat, 1.0, mask);
}

LossFn maybe_bugged(LossFn fn, bool inject_bug) {
    if (!inject_bug) return fn;
    return [fn](const std::vector<Eigen::MatrixXd>& inputs) {
        LossResult r = fn(inputs);
        r.grads[0](0, 0) += 0.5; // deliberate corruption, must be caught
        return r;
    };
}

int run_grad_check(const GradCheckArgs& args) {
    if (args.which != "all" && args.which != "copynce" && args.which != "infonce" && args.which != "bce" &&
        args.which != "koleo") {
        throw ParamError("--loss must be one of all, copynce, infonce, bce, koleo");
    }
    if (args.fixtures < 1) throw ParamError("--fixtures must be >= 1");
    json reports = json::array();
    bool all_pass = true;
    Rng root(args.seed);

    auto record = [&](const std::string& name, const GradCheckReport& r) {
        all_pass = all_pass && r.pass;
        json entry{{"loss", name},
                   {"pass", r.pass},
                   {"max_rel_err", r.max_rel_err},
                   {"entries_checked", r.entries_checked}};
        if (!r.pass) {
            entry["worst"] = json{{"input", r.worst_input},
                                  {"row", r.worst_row},
                                  {"col", r.worst_col},
                                  {"analytic", r.worst_analytic},
                                  {"numeric", r.worst_numeric}};
        }
        reports.push_back(entry);
    };

    const bool all = args.which == "all";
    for (int fx = 0; fx < args.fixtures; ++fx) {
        Rng rng = root.stream(static_cast<std::uint64_t>(fx));
        const std::string suffix = "[" + std::to_string(fx) + "]";
        if (all || args.which == "copynce") {
            const TargetDistribution t_qr = random_targets(rng, 6, 8);
            const TargetDistribution t_rq = random_targets(rng, 8, 6);
            LossFn fn = [&](const std::vector<Eigen::MatrixXd>& in) {
                return copynce_symmetric(in[0], in[1], t_qr, t_rq, 1.0 / 16.0);
            };
            record("copynce_symmetric" + suffix,
                   grad_check(maybe_bugged(fn, args.inject_bug), {random_tokens(rng, 6, 4), random_tokens(rng, 8, 4)},
                              args.eps, args.tol));
        }
        if (all || args.which == "infonce") {
            LossFn fn = [&](const std::vector<Eigen::MatrixXd>& in) {
                return infonce(in[0].row(0).transpose(), in[1].row(0).transpose(), in[2], 1.0 / 16.0);
            };
            record("infonce" + suffix,
                   grad_check(maybe_bugged(fn, args.inject_bug),
                              {random_tokens(rng, 1, 6), random_tokens(rng, 1, 6), random_tokens(rng, 8, 6)},
                              args.eps, args.tol));
        }
        if (all || args.which == "bce") {
            const int label = fx % 2;
            LossFn fn = [label](const std::vector<Eigen::MatrixXd>& in) { return bce_matcher(in[0](0, 0), label); };
            record("bce" + suffix,
                   grad_check(maybe_bugged(fn, args.inject_bug),
                              {Eigen::MatrixXd::Constant(1, 1, rng.uniform(-3.0, 3.0))}, args.eps, args.tol));
        }
        if (all || args.which == "koleo") {
            LossFn fn = [](const std::vector<Eigen::MatrixXd>& in) { return koleo(in[0]); };
            record("koleo" + suffix,
                   grad_check(maybe_bugged(fn, args.inject_bug), {random_tokens(rng, 8, 4)}, args.eps, args.tol));
        }
    }

    json out{{"pass", all_pass}, {"eps", args.eps}, {"tol", args.tol}, {"checks", reports}};
    std::cout << out.dump(2) << "\n";
    return all_pass ? 0 : 4;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string scores_path;
    std::string gt_path;
    std::string config_path;
    bool score_normalize_on = false;
    bool stretch_on = false;
    std::string queries_tok, queries_ids;
    std::string aux_tok, aux_ids;
    double alpha = std::numeric_limits<double>::quiet_NaN();
    int k_start = -1, k_end = -1;
    double beta = std::numeric_limits<double>::quiet_NaN();
    int stretch_k = -1;
    std::string out_path;
};

json metrics_json(const MetricsReport& m) {
    return json{{"map", m.map}, {"uap", m.uap}, {"rp90", m.rp90}, {"n_queries", m.n_queries},
                {"n_positives", m.n_positives}};
}

bool within_query_order_equal(const std::vector<ScoredPair>& a, const std::vector<ScoredPair>& b) {
    auto ranking = [](const std::vector<ScoredPair>& pairs) {
        std::map<std::string, std::vector<ScoredPair>> by_query;
        for (const auto& p : pairs) by_query[p.query_id].push_back(p);
        std::map<std::string, std::vector<std::string>> order;
        for (auto& [q, list] : by_query) {
            std::sort(list.begin(), list.end(), [](const ScoredPair& x, const ScoredPair& y) {
                if (x.score != y.score) return x.score > y.score;
                return x.ref_id < y.ref_id;
            });
            for (const auto& p : list) order[q].push_back(p.ref_id);
        }
        return order;
    };
    return ranking(a) == ranking(b);
}

int run_eval(const EvalArgs& args) {
    // Post-processing defaults come from the config file when given;
    // explicit flags override it.
    double alpha = 1.0, beta = 2.5;
    int k_start = 0, k_end = 9, stretch_k = 5;
    if (!args.config_path.empty()) {
        std::ifstream f(args.config_path);
        if (!f) throw ParamError("cannot open config: " + args.config_path);
        json cfg = json::parse(f, nullptr, false);
        if (cfg.is_discarded() || !cfg.is_object()) throw FormatError(args.config_path + ": not a JSON object");
        if (cfg.contains("score_normalize")) {
            const json& sn = cfg.at("score_normalize");
            alpha = sn.value("alpha", alpha);
            k_start = sn.value("k_start", k_start);
            k_end = sn.value("k_end", k_end);
        }
        if (cfg.contains("feature_stretch")) {
            const json& st = cfg.at("feature_stretch");
            beta = st.value("beta", beta);
            stretch_k = st.value("k", stretch_k);
        }
    }
    if (!std::isnan(args.alpha)) alpha = args.alpha;
    if (args.k_start >= 0) k_start = args.k_start;
    if (args.k_end >= 0) k_end = args.k_end;
    if (!std::isnan(args.beta)) beta = args.beta;
    if (args.stretch_k > 0) stretch_k = args.stretch_k;

    const GroundTruth gt = load_ground_truth_csv(args.gt_path);
    const std::vector<ScoredPair> raw = load_scores_csv(args.scores_path, &gt);
    const MetricsReport raw_metrics = evaluate(raw, gt);

    json report{{"map", raw_metrics.map},
                {"uap", raw_metrics.uap},
                {"rp90", raw_metrics.rp90},
                {"n_queries", raw_metrics.n_queries},
                {"n_positives", raw_metrics.n_positives}};
    json params{{"alpha", alpha}, {"k_start", k_start}, {"k_end", k_end}, {"beta", beta}, {"stretch_k", stretch_k},
                {"score_normalize", args.score_normalize_on}, {"stretch", args.stretch_on}};

    std::map<std::string, std::vector<double>> background;
    if (args.score_normalize_on || args.stretch_on) {
        if (args.queries_tok.empty() || args.aux_tok.empty()) {
            throw ParamError("post-processing needs --queries/--query-ids and --aux/--aux-ids embeddings");
        }
        const auto queries = load_embeddings(args.queries_tok, args.queries_ids);
        const auto aux = load_embeddings(args.aux_tok, args.aux_ids);
        const int need = std::max(k_end + 1, stretch_k);
        background = background_cosines(queries, aux, std::min<int>(need, static_cast<int>(aux.size())));
    }

    if (args.score_normalize_on) {
        const std::vector<ScoredPair> normalized = score_normalize(raw, background, alpha, k_start, k_end);
        const MetricsReport sn_metrics = evaluate(normalized, gt);
        report["raw"] = metrics_json(raw_metrics);
        report["score_normalized"] = metrics_json(sn_metrics);
        report["within_query_order_preserved"] = within_query_order_equal(raw, normalized);
        report["map"] = sn_metrics.map;
        report["uap"] = sn_metrics.uap;
        report["rp90"] = sn_metrics.rp90;
    }

    if (args.stretch_on) {
        if (beta == 0.0) std::cerr << "warning: beta 0 collapses every stretched query to the zero vector\n";
        std::vector<ScoredPair> stretched = raw;
        for (auto& p : stretched) {
            auto it = background.find(p.query_id);
            if (it == background.end() || static_cast<int>(it->second.size()) < stretch_k) {
                throw ParamError("stretch: query " + p.query_id + " lacks " + std::to_string(stretch_k) +
                                 " background scores");
            }
            double mean = 0.0;
            for (int i = 0; i < stretch_k; ++i) mean += it->second[static_cast<std::size_t>(i)];
            mean /= stretch_k;
            p.score = stretched_euclidean_score(beta * mean, p.score);
        }
        const MetricsReport st_metrics = evaluate(stretched, gt);
        report["raw"] = metrics_json(raw_metrics);
        report["stretched"] = metrics_json(st_metrics);
        report["stretch_within_query_order_preserved"] = within_query_order_equal(raw, stretched);
    }

    std::cout << report.dump(2) << "\n";
    if (!args.out_path.empty()) {
        std::ofstream f(args.out_path);
        if (!f) throw ParamError("cannot write: " + args.out_path);
        f << report.dump(2) << '\n';
        write_manifest(args.out_path + ".manifest.json", "eval", params,
                       json{{"scores", args.scores_path}, {"gt", args.gt_path}}, json{{"report", args.out_path}});
    }
    return 0;
}

// ---- heatmap -----------------------------------------------------------------

struct HeatmapArgs {
    std::string tokens_q_path;
    std::string tokens_r_path;
    std::string grid_q_text;
    std::string grid_r_text;
    std::string probe_text; // "row,col" on the query grid
    bool entropy = false;
    double tau = 1.0 / 16.0;
    int cell_size = 16;
    std::string out_path;
};

std::pair<int, int> parse_grid(const std::string& text, const char* what) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw ParamError(std::string(what) + ": expected 'rows,cols'");
    try {
        const int rows = std::stoi(text.substr(0, comma));
        const int cols = std::stoi(text.substr(comma + 1));
        if (rows <= 0 || cols <= 0) throw std::invalid_argument("nonpositive");
        return {rows, cols};
    } catch (const std::exception&) {
        throw ParamError(std::string(what) + ": expected 'rows,cols', got '" + text + "'");
    }
}

int run_heatmap(const HeatmapArgs& args) {
    if (args.entropy == !args.probe_text.empty()) {
        throw ParamError("choose exactly one of --probe row,col or --entropy");
    }
    const Eigen::MatrixXd tokens_q = load_tokens(args.tokens_q_path);
    const auto [gq_rows, gq_cols] = parse_grid(args.grid_q_text, "--grid-q");
    if (gq_rows * gq_cols != tokens_q.rows()) {
        throw ParamError("--grid-q does not tile the query token count");
    }

    Image rendered(1, 1);
    json params{{"tau", args.tau}, {"cell_size", args.cell_size}, {"grid_q", args.grid_q_text}};
    if (args.entropy) {
        const Eigen::MatrixXd tokens_r =
            args.tokens_r_path.empty() ? tokens_q : load_tokens(args.tokens_r_path);
        const Eigen::VectorXd entropy = affinity_entropy(tokens_q, tokens_r, args.tau);
        rendered = render_heatmap(entropy, gq_rows, gq_cols, args.cell_size);
        params["mode"] = "entropy";
    } else {
        if (args.tokens_r_path.empty()) throw ParamError("--probe needs --tokens-r");
        const Eigen::MatrixXd tokens_r = load_tokens(args.tokens_r_path);
        const auto [gr_rows, gr_cols] = parse_grid(args.grid_r_text, "--grid-r");
        if (gr_rows * gr_cols != tokens_r.rows()) {
            throw ParamError("--grid-r does not tile the reference token count");
        }
        const auto [pr, pc] = parse_grid(args.probe_text, "--probe");
        if (pr >= gq_rows || pc >= gq_cols) throw ParamError("probe outside the query grid");
        const Eigen::MatrixXd p = affinity(tokens_q, tokens_r, args.tau);
        rendered = render_heatmap(p.row(pr * gq_cols + pc).transpose(), gr_rows, gr_cols, args.cell_size);
        params["mode"] = "probe";
        params["probe"] = args.probe_text;
        params["grid_r"] = args.grid_r_text;
    }
    save_png(rendered, args.out_path);
    write_manifest(args.out_path + ".manifest.json", "heatmap", params,
                   json{{"tokens_q", args.tokens_q_path}, {"tokens_r", args.tokens_r_path}},
                   json{{"png", args.out_path}});
    std::cout << "wrote " << args.out_path << " (" << rendered.width() << "x" << rendered.height() << ")\n";
    return 0;
}

// ---- encode --------------------------------------------------------------

struct EncodeArgs {
    std::string input; // png file or directory
    std::string out_tok;
    std::string out_ids; // global mode only
    int patch_size = 16;
    bool global = false;
    int threads = 0;
};

int run_encode(const EncodeArgs& args) {
    const ToyEncoderConfig config{args.patch_size, 0.1};
    if (args.global) {
        if (args.out_ids.empty()) throw ParamError("--global needs --out-ids");
        const auto files = list_pngs(args.input);
        std::vector<Embedding> embeddings(files.size());
        parallel_for(files.size(), resolve_threads(args.threads), [&](std::size_t i) {
            embeddings[i].id = files[i].stem().string();
            embeddings[i].vector = encode_global(load_png(files[i].string()), config);
        });
        save_embeddings(embeddings, args.out_tok, args.out_ids);
        write_manifest(args.out_tok + ".manifest.json", "encode",
                       json{{"patch_size", args.patch_size}, {"global", true}}, json{{"input", args.input}},
                       json{{"tokens", args.out_tok}, {"ids", args.out_ids}, {"images", files.size()}});
        std::cout << "encoded " << files.size() << " global descriptors\n";
    } else {
        const Eigen::MatrixXd tokens = encode_patches(load_png(args.input), config);
        save_tokens(tokens, args.out_tok);
        write_manifest(args.out_tok + ".manifest.json", "encode",
                       json{{"patch_size", args.patch_size}, {"global", false}}, json{{"input", args.input}},
                       json{{"tokens", args.out_tok}, {"rows", tokens.rows()}});
        std::cout << "encoded " << tokens.rows() << " patch tokens\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pixel-traceability toolkit: edited-pair generation, patch supervision, "
                 "contrastive losses with verified gradients, and retrieval metrics"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    GenPairsArgs gen;
    auto* cmd_gen = app.add_subcommand("gen-pairs", "generate edited pairs with coordinate tables");
    cmd_gen->add_option("--input", gen.input_dir, "directory of source .png images")->required();
    cmd_gen->add_option("--pipeline-a", gen.pipeline_a_path, "pipeline JSON for view A")->required();
    cmd_gen->add_option("--pipeline-b", gen.pipeline_b_path, "pipeline JSON for view B")->required();
    cmd_gen->add_option("--out", gen.out_dir, "output directory")->required();
    cmd_gen->add_option("--seed", gen.seed, "seed mixed into every randomized draw");
    cmd_gen->add_flag("--keep-occluded", gen.keep_occluded, "keep table entries under stickers/erases");
    cmd_gen->add_option("--threads", gen.threads, "worker threads (or COPYTRACE_THREADS)");

    SuperviseArgs sup;
    auto* cmd_sup = app.add_subcommand("supervise", "patch-overlap target distribution from a pair");
    cmd_sup->add_option("--pair", sup.pair_dir, "pair directory from gen-pairs")->required();
    cmd_sup->add_option("--out", sup.out_path, "output .tgt path")->required();
    cmd_sup->add_option("--patch-size", sup.patch_size, "patch size in pixels (default 16)");
    cmd_sup->add_option("--gamma", sup.gamma_text, "sharpening exponent (number or 'inf', default 1)");
    cmd_sup->add_option("--direction", sup.direction, "which table to supervise: ba (default) or ab");

    LossArgs loss_args;
    auto* cmd_loss = app.add_subcommand("loss", "loss report for token files against targets");
    cmd_loss->add_option("--tokens-q", loss_args.tokens_q_path, "query .tok")->required();
    cmd_loss->add_option("--tokens-r", loss_args.tokens_r_path, "reference .tok")->required();
    cmd_loss->add_option("--targets", loss_args.targets_path, "target .tgt (query -> reference)")->required();
    cmd_loss->add_option("--targets-rq", loss_args.targets_rq_path, "reverse targets; enables the symmetric form");
    cmd_loss->add_option("--mode", loss_args.mode, "matcher or descriptor (default matcher)");
    cmd_loss->add_option("--tau", loss_args.tau, "softmax temperature (default 1/16)");
    cmd_loss->add_option("--w-nce", loss_args.w_nce, "auxiliary weight (default 3 matcher, 5 descriptor)");
    cmd_loss->add_option("--logit", loss_args.logit, "matcher logit (default: global-descriptor cosine)");
    cmd_loss->add_option("--label", loss_args.label, "matcher label 0/1 (default 1)");
    cmd_loss->add_option("--out", loss_args.out_path, "also write the JSON report here");

    GradCheckArgs gc;
    auto* cmd_gc = app.add_subcommand("grad-check", "finite-difference verification of analytic gradients");
    cmd_gc->add_option("--loss", gc.which, "all|copynce|infonce|bce|koleo (default all)");
    cmd_gc->add_option("--eps", gc.eps, "central-difference step, in [1e-7, 1e-3] (default 1e-5)");
    cmd_gc->add_option("--tol", gc.tol, "max relative error accepted (default 1e-4)");
    cmd_gc->add_option("--seed", gc.seed, "fixture seed (default 7)");
    cmd_gc->add_option("--fixtures", gc.fixtures, "random fixtures per loss (default 5)");
    cmd_gc->add_flag("--inject-bug", gc.inject_bug, "negative control: corrupt one gradient entry")
        ->group(""); // hidden

    EvalArgs eval_args;
    auto* cmd_eval = app.add_subcommand("eval", "retrieval metrics over scored pairs");
    cmd_eval->add_option("--scores", eval_args.scores_path, "CSV query_id,ref_id,score")->required();
    cmd_eval->add_option("--gt", eval_args.gt_path, "CSV query_id,ref_id")->required();
    cmd_eval->add_option("--config", eval_args.config_path, "post-processing defaults JSON");
    cmd_eval->add_flag("--score-normalize", eval_args.score_normalize_on, "subtract background bias per query");
    cmd_eval->add_flag("--stretch", eval_args.stretch_on, "feature-stretching rerank of the scores");
    cmd_eval->add_option("--queries", eval_args.queries_tok, "query global descriptors .tok");
    cmd_eval->add_option("--query-ids", eval_args.queries_ids, "query id sidecar");
    cmd_eval->add_option("--aux", eval_args.aux_tok, "auxiliary-set descriptors .tok");
    cmd_eval->add_option("--aux-ids", eval_args.aux_ids, "auxiliary id sidecar");
    cmd_eval->add_option("--alpha", eval_args.alpha, "normalization strength (default 1)");
    cmd_eval->add_option("--k-start", eval_args.k_start, "background window start (default 0)");
    cmd_eval->add_option("--k-end", eval_args.k_end, "background window end (default 9)");
    cmd_eval->add_option("--beta", eval_args.beta, "stretch factor (default 2.5)");
    cmd_eval->add_option("--k", eval_args.stretch_k, "stretch background size (default 5)");
    cmd_eval->add_option("--out", eval_args.out_path, "also write the JSON report here");

    HeatmapArgs heat;
    auto* cmd_heat = app.add_subcommand("heatmap", "render an affinity row or per-token entropy as PNG");
    cmd_heat->add_option("--tokens-q", heat.tokens_q_path, "query .tok")->required();
    cmd_heat->add_option("--tokens-r", heat.tokens_r_path, "reference .tok");
    cmd_heat->add_option("--grid-q", heat.grid_q_text, "query grid 'rows,cols'")->required();
    cmd_heat->add_option("--grid-r", heat.grid_r_text, "reference grid 'rows,cols'");
    cmd_heat->add_option("--probe", heat.probe_text, "query patch 'row,col' whose affinity row to render");
    cmd_heat->add_flag("--entropy", heat.entropy, "render the per-token affinity entropy map");
    cmd_heat->add_option("--tau", heat.tau, "softmax temperature (default 1/16)");
    cmd_heat->add_option("--cell-size", heat.cell_size, "pixels per grid cell (default 16)");
    cmd_heat->add_option("--out", heat.out_path, "output .png")->required();

    EncodeArgs enc;
    auto* cmd_enc = app.add_subcommand("encode", "deterministic toy patch/global features as .tok");
    cmd_enc->add_option("--input", enc.input, "a .png (patch mode) or a directory (--global)")->required();
    cmd_enc->add_option("--out", enc.out_tok, "output .tok")->required();
    cmd_enc->add_option("--out-ids", enc.out_ids, "id sidecar (global mode)");
    cmd_enc->add_option("--patch-size", enc.patch_size, "patch size (default 16)");
    cmd_enc->add_flag("--global", enc.global, "one global descriptor per image in the directory");
    cmd_enc->add_option("--threads", enc.threads, "worker threads (or COPYTRACE_THREADS)");

    try {
        app.parse(argc, argv);
        if (*cmd_gen) return run_gen_pairs(gen);
        if (*cmd_sup) return run_supervise(sup);
        if (*cmd_loss) return run_loss(loss_args);
        if (*cmd_gc) return run_grad_check(gc);
        if (*cmd_eval) return run_eval(eval_args);
        if (*cmd_heat) return run_heatmap(heat);
        if (*cmd_enc) return run_encode(enc);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ParamError& e) {
        std::cerr << "parameter error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
