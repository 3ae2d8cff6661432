// luq: command-line driver for the layerwise ultra-low bit quantization
// pipeline (calib -> entropy -> plan -> quantize -> eval), plus the
// stability, trade-off and ablation experiment commands.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "luq/calib.hpp"
#include "luq/container.hpp"
#include "luq/entropy.hpp"
#include "luq/eval.hpp"
#include "luq/net.hpp"
#include "luq/quant.hpp"
#include "luq/rng.hpp"
#include "luq/select.hpp"

using nlohmann::json;

namespace {

int dispatch(const std::vector<std::string>& args);

// ---- small helpers -----------------------------------------------------------

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoll(item));
    return out;
}

// "lo:hi:step" inclusive grid
std::vector<int64_t> parse_grid(const std::string& s) {
    int64_t lo, hi, step;
    char c1, c2;
    std::stringstream ss(s);
    if (!(ss >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0)
        throw luq::ValidationError("bad grid spec (want lo:hi:step): " + s);
    std::vector<int64_t> out;
    for (int64_t k = lo; k <= hi; k += step) out.push_back(k);
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw luq::ValidationError("cannot open for writing: " + path);
    f << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw luq::ValidationError("cannot open: " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw luq::ValidationError("bad JSON in " + path + ": " + e.what());
    }
}

uint64_t resolve_seed(uint64_t seed) {
    if (const char* env = std::getenv("LUQ_SEED")) return std::stoull(env);
    return seed;
}

void write_run_echo(const std::string& subcommand, const json& cfg,
                    const std::string& out_path) {
    json run = {{"subcommand", subcommand}, {"config", cfg}};
    write_json_file(run, out_path + ".run.json");
}

struct QuantFlags {
    std::string q_low = "bin";
    std::string q_high = "gptq4";
    int block_size = 128;
    int group_size = 128;
    double damping = 0.01;
    double salient_frac = 0.05;
    bool independent = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--q-low", q_low, "ultra-low quantizer (bin)");
        cmd->add_option("--q-high", q_high, "4-bit quantizer (gptq4|rtn4)");
        cmd->add_option("--block-size", block_size, "compensation block size");
        cmd->add_option("--group-size", group_size, "scale group size");
        cmd->add_option("--damping", damping, "Hessian damping fraction");
        cmd->add_option("--salient-frac", salient_frac, "salient column fraction");
        cmd->add_flag("--independent", independent,
                      "calibrate each layer from the fp32 prefix");
    }
    luq::QuantConfig to_config() const {
        luq::QuantConfig c;
        c.q_low = q_low;
        c.q_high = q_high;
        c.block_size = block_size;
        c.group_size = group_size;
        c.damping = damping;
        c.salient_frac = salient_frac;
        c.sequential = !independent;
        return c;
    }
    json to_json() const {
        return {{"q_low", q_low},         {"q_high", q_high},
                {"block_size", block_size}, {"group_size", group_size},
                {"damping", damping},     {"salient_frac", salient_frac},
                {"independent", independent}};
    }
};

std::vector<int64_t> backbone_params(const luq::ModelManifest& m) {
    int64_t per = 4 * m.hidden_dim * m.hidden_dim + 2 * m.hidden_dim * m.ff_dim;
    return std::vector<int64_t>(static_cast<size_t>(m.num_layers), per);
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw luq::ValidationError("cannot open for writing: " + path);
    f << header << "\n";
    for (const auto& r : rows) f << r << "\n";
}

// pool sizes default to 4x the drawn count so seeded draws vary across seeds
luq::CalibrationSet generate_calibration(const luq::LayerStack& stack, int64_t n_seqs,
                                         int64_t seq_len, double alpha, uint64_t seed,
                                         int64_t text_pool_size, int64_t mm_pool_size) {
    if (text_pool_size <= 0) text_pool_size = 4 * n_seqs;
    if (mm_pool_size <= 0) mm_pool_size = 4 * n_seqs;
    auto text_pool = luq::make_text_pool(stack, text_pool_size, seq_len,
                                         luq::derive_seed(seed, 11));
    auto mm_pool =
        luq::make_mm_pool(stack, mm_pool_size, seq_len, luq::derive_seed(seed, 12));
    return luq::build_mixed_calibration(text_pool, mm_pool, n_seqs, seq_len, alpha, seed);
}

// ---- subcommand implementations ------------------------------------------------

struct SynthArgs {
    int64_t L = 8, d = 32, heads = 4, ff = 0, vocab = 32;
    std::string profile;  // comma list; empty -> all full rank
    uint64_t seed = 0;
    bool no_pos = false;
    double mlp_gain = -1.0, act_gain = -1.0, attn_scale = -1.0,
           depth_growth = -1.0;  // <0 -> SynthParams defaults
    int64_t embed_dims = 0;      // 0 -> full hidden dim
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    std::vector<int64_t> ranks = a.profile.empty()
                                     ? std::vector<int64_t>(static_cast<size_t>(a.L), a.d)
                                     : parse_int_list(a.profile);
    luq::SynthParams p;
    p.heads = a.heads;
    p.ff_dim = a.ff;
    p.vocab_size = a.vocab;
    p.pos_encoding = !a.no_pos;
    if (a.mlp_gain > 0) p.mlp_gain = static_cast<float>(a.mlp_gain);
    if (a.act_gain > 0) p.act_gain = static_cast<float>(a.act_gain);
    if (a.attn_scale > 0) p.attn_scale = static_cast<float>(a.attn_scale);
    if (a.depth_growth > 0) p.depth_growth = static_cast<float>(a.depth_growth);
    p.embed_dims = a.embed_dims;
    luq::Container c = luq::synth_stack(a.L, a.d, ranks, seed, p);
    luq::save_container(c, a.out);
    write_run_echo("synth", {{"L", a.L}, {"d", a.d}, {"heads", a.heads}, {"ff", a.ff},
                             {"vocab", a.vocab}, {"profile", a.profile},
                             {"seed", seed}, {"no_pos", a.no_pos},
                             {"mlp_gain", a.mlp_gain}, {"act_gain", a.act_gain},
                             {"attn_scale", a.attn_scale}, {"depth_growth", a.depth_growth},
                             {"embed_dims", a.embed_dims}, {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << " (" << a.L << " layers, d=" << a.d << ")\n";
    return 0;
}

struct CalibArgs {
    std::string model;
    int64_t n_seqs = 128, seq_len = 2048;
    double alpha = 0.5;
    uint64_t seed = 0;
    int64_t text_pool = 0, mm_pool = 0;
    std::string out;
};

int cmd_calib(const CalibArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    luq::CalibrationSet set = generate_calibration(stack, a.n_seqs, a.seq_len, a.alpha,
                                                   seed, a.text_pool, a.mm_pool);
    luq::save_container(luq::calib_to_container(set, stack.manifest.hidden_dim), a.out);
    write_run_echo("calib",
                   {{"model", a.model}, {"n_seqs", a.n_seqs}, {"seq_len", a.seq_len},
                    {"alpha", a.alpha}, {"seed", seed}, {"text_pool", a.text_pool},
                    {"mm_pool", a.mm_pool}, {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << " (" << set.count() << " sequences, "
              << set.multimodal_count() << " multimodal)\n";
    return 0;
}

struct EntropyArgs {
    std::string model, calib, stability;
    int64_t k = 0;  // 0 -> from --stability file, else 100
    uint64_t seed = 0;
    std::string out;
};

int cmd_entropy(const EntropyArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    int64_t k = a.k;
    if (k <= 0) {
        if (!a.stability.empty())
            k = read_json_file(a.stability).at("selected_k").get<int64_t>();
        else
            k = 100;
    }
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    luq::CalibrationSet set = luq::calib_from_container(luq::load_container(a.calib));
    luq::ActivationSet acts = luq::capture_activations(stack, set);
    luq::EntropyProfile prof = luq::layer_entropy_profile(acts, k, seed);
    json out = {{"K", prof.k}, {"H", prof.h}, {"pi", prof.pi}, {"seed", seed}};
    write_json_file(out, a.out);
    write_run_echo("entropy",
                   {{"model", a.model}, {"calib", a.calib}, {"k", k},
                    {"stability", a.stability}, {"seed", seed}, {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << " (K=" << k << ")\n";
    return 0;
}

struct StabilityArgs {
    std::string model, calib;
    std::string grid = "10:200:10";
    uint64_t seed = 0;
    std::string out;
};

int cmd_stability(const StabilityArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    std::vector<int64_t> grid = parse_grid(a.grid);
    if (grid.size() < 4)
        throw luq::ValidationError("stability: grid too small (need >= 4 K values)");
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    luq::CalibrationSet set = luq::calib_from_container(luq::load_container(a.calib));
    luq::ActivationSet acts = luq::capture_activations(stack, set);
    luq::StabilityCurve curve = luq::rank_stability_curve(acts, grid, seed);
    json out = {{"grid", curve.grid},
                {"distances", curve.distances},
                {"selected_k", curve.selected_k},
                {"knee_found", curve.knee_found},
                {"sensitivity", curve.sensitivity},
                {"seed", seed}};
    write_json_file(out, a.out);
    write_run_echo("stability",
                   {{"model", a.model}, {"calib", a.calib}, {"k_grid", a.grid},
                    {"seed", seed}, {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << " (selected K=" << curve.selected_k
              << (curve.knee_found ? "" : ", no knee") << ")\n";
    return 0;
}

struct PlanArgs {
    std::string model, entropy, calib;
    std::string mode = "fixed-k";
    int64_t k = 0;
    double tau = 0.0;
    std::string search = "greedy";
    double budget_bytes = 0.0;
    double holdout = 0.25;
    std::string metric = "accuracy";
    uint64_t seed = 0;
    QuantFlags qf;
    std::string out;
};

int cmd_plan(const PlanArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    json ej = read_json_file(a.entropy);
    std::vector<int64_t> pi = ej.at("pi").get<std::vector<int64_t>>();
    luq::Container mc = luq::load_container(a.model);
    luq::ModelManifest m = luq::manifest_of(mc);
    if (static_cast<int64_t>(pi.size()) != m.num_layers)
        throw luq::ValidationError("plan: entropy profile layer count != model");
    int64_t L = m.num_layers;

    luq::QuantPlan plan;
    json prov;
    if (a.mode == "fixed-k") {
        plan = luq::make_plan(pi, a.k, a.qf.q_low, a.qf.q_high);
        plan.mode = "fixed-k";
    } else if (a.mode == "budget") {
        double non_backbone =
            static_cast<double>(2 * m.vocab_size * m.hidden_dim) * 4.0;
        plan = luq::budget_select(pi, backbone_params(m), a.budget_bytes,
                                  luq::kNominalBitsLow, luq::kNominalBitsHigh,
                                  non_backbone);
        plan.provenance["q_low"] = a.qf.q_low;
    } else if (a.mode == "threshold") {
        if (a.calib.empty())
            throw luq::ValidationError("plan: --calib required in threshold mode");
        luq::LayerStack stack = luq::LayerStack::from_container(mc);
        luq::CalibrationSet set = luq::calib_from_container(luq::load_container(a.calib));
        auto [calib_part, eval_part] = luq::split_holdout(set, a.holdout, seed);
        luq::StepMetric step = luq::make_step_metric(stack, pi, calib_part, eval_part,
                                                     a.qf.to_config(), a.metric);
        luq::SelectionResult sel =
            a.search == "binary" ? luq::binary_search_select(step, L, a.tau)
                                 : luq::greedy_select(step, L, a.tau);
        plan = luq::make_plan(pi, sel.k_star, a.qf.q_low, a.qf.q_high);
        plan.mode = "threshold";
        plan.provenance = {{"tau", a.tau},
                           {"search", a.search},
                           {"metric", a.metric},
                           {"eval_count", sel.eval_count},
                           {"non_monotone_suspected", sel.non_monotone_suspected}};
        json evals = json::array();
        for (auto& [k, v] : sel.evaluated) evals.push_back({{"k", k}, {"perf", v}});
        plan.provenance["evaluated"] = evals;
    } else {
        throw luq::ValidationError("plan: unknown mode '" + a.mode + "'");
    }
    write_json_file(plan.to_json(), a.out);
    write_run_echo("plan",
                   {{"model", a.model}, {"entropy", a.entropy}, {"calib", a.calib},
                    {"mode", a.mode}, {"k", a.k}, {"tau", a.tau}, {"search", a.search},
                    {"budget_bytes", a.budget_bytes}, {"holdout", a.holdout},
                    {"metric", a.metric}, {"seed", seed}, {"quant", a.qf.to_json()},
                    {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << " (k=" << plan.k << ", avg bits nominal "
              << plan.avg_bits_nominal << ")\n";
    return 0;
}

struct QuantizeArgs {
    std::string model, calib, plan;
    QuantFlags qf;
    std::string out;
};

int cmd_quantize(const QuantizeArgs& a) {
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    luq::CalibrationSet set = luq::calib_from_container(luq::load_container(a.calib));
    luq::QuantPlan plan = luq::QuantPlan::from_json(read_json_file(a.plan));
    if (static_cast<int64_t>(plan.tags.size()) != stack.manifest.num_layers)
        throw luq::ValidationError("quantize: plan layer count != model");
    luq::Container qc = luq::quantize_stack(stack, plan.tags, set, a.qf.to_config());
    qc.config["plan"] = plan.to_json();
    luq::save_container(qc, a.out);
    write_run_echo("quantize",
                   {{"model", a.model}, {"calib", a.calib}, {"plan", a.plan},
                    {"quant", a.qf.to_json()}, {"out", a.out}},
                   a.out);
    auto bits = luq::per_layer_bits(qc);
    std::cout << "wrote " << a.out << " (realized avg bits "
              << luq::avg_bitwidth(bits) << ")\n";
    return 0;
}

struct EvalArgs {
    std::string model, calib;
    double holdout = 0.25;
    std::string metric = "accuracy";
    uint64_t seed = 0;
    std::string out;  // base path; writes .json and .csv
};

int cmd_eval(const EvalArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    luq::Container mc = luq::load_container(a.model);
    luq::LayerStack stack = luq::LayerStack::from_container(mc);
    luq::CalibrationSet set = luq::calib_from_container(luq::load_container(a.calib));
    auto [calib_part, eval_part] = luq::split_holdout(set, a.holdout, seed);
    luq::EvalReport rep = luq::run_metric(a.metric, stack, eval_part);

    int64_t k = 0;
    double avg_bits = 32.0;
    if (mc.kind == "quantized") {
        if (mc.config.contains("plan")) {
            luq::QuantPlan plan = luq::QuantPlan::from_json(mc.config["plan"]);
            k = plan.k;
        }
        avg_bits = luq::avg_bitwidth(luq::per_layer_bits(mc));
    }
    rep.descriptor = {{"model", a.model}, {"calib", a.calib}, {"holdout", a.holdout},
                      {"eval_seqs", eval_part.count()}, {"k", k},
                      {"avg_bits", avg_bits}, {"seed", seed}};
    write_json_file(rep.to_json(), a.out + ".json");
    std::ostringstream row;
    row << k << "," << avg_bits << "," << rep.scalar << "," << a.metric << "," << seed;
    write_csv(a.out + ".csv", "k,avg_bits,score,metric,seed", {row.str()});
    write_run_echo("eval",
                   {{"model", a.model}, {"calib", a.calib}, {"holdout", a.holdout},
                    {"metric", a.metric}, {"seed", seed}, {"out", a.out}},
                   a.out);
    std::cout << a.metric << " = " << rep.scalar << " over " << eval_part.count()
              << " sequences\n";
    return 0;
}

struct CurveArgs {
    std::string model, calib, entropy;
    std::string k_steps;  // empty -> 0..L
    double holdout = 0.25;
    std::string metric = "accuracy";
    uint64_t seed = 0;
    QuantFlags qf;
    std::string out;  // base path
};

int cmd_curve(const CurveArgs& a) {
    uint64_t seed = resolve_seed(a.seed);
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    luq::CalibrationSet set = luq::calib_from_container(luq::load_container(a.calib));
    std::vector<int64_t> pi =
        read_json_file(a.entropy).at("pi").get<std::vector<int64_t>>();
    std::vector<int64_t> ks;
    if (a.k_steps.empty())
        for (int64_t k = 0; k <= stack.manifest.num_layers; ++k) ks.push_back(k);
    else
        ks = parse_int_list(a.k_steps);
    auto [calib_part, eval_part] = luq::split_holdout(set, a.holdout, seed);
    auto rows = luq::tradeoff_curve(stack, pi, calib_part, eval_part, ks,
                                    a.qf.to_config(), a.metric);

    std::vector<std::string> csv;
    json jrows = json::array();
    for (const auto& r : rows) {
        std::ostringstream os;
        os << r.k << "," << r.avg_bits << "," << r.score << "," << a.metric << ","
           << seed;
        csv.push_back(os.str());
        jrows.push_back({{"k", r.k}, {"avg_bits", r.avg_bits}, {"score", r.score}});
    }
    write_csv(a.out + ".csv", "k,avg_bits,score,metric,seed", csv);
    write_json_file({{"metric", a.metric}, {"seed", seed}, {"rows", jrows}},
                    a.out + ".json");
    write_run_echo("curve",
                   {{"model", a.model}, {"calib", a.calib}, {"entropy", a.entropy},
                    {"k_steps", a.k_steps}, {"holdout", a.holdout},
                    {"metric", a.metric}, {"seed", seed}, {"quant", a.qf.to_json()},
                    {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << ".csv (" << rows.size() << " rows)\n";
    return 0;
}

struct AblateOrderArgs {
    std::string model;
    std::string k_steps;
    int64_t n_seqs = 16, seq_len = 32;
    double alpha = 0.5, holdout = 0.25;
    int64_t entropy_k = 24;
    std::string seeds = "1,2,3,4,5,6,7,8,9,10";
    std::string metric = "accuracy";
    QuantFlags qf;
    std::string out;
};

int cmd_ablate_order(const AblateOrderArgs& a) {
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    int64_t L = stack.manifest.num_layers;
    std::vector<int64_t> ks;
    if (a.k_steps.empty())
        for (int64_t k = 0; k <= L; ++k) ks.push_back(k);
    else
        ks = parse_int_list(a.k_steps);
    std::vector<int64_t> seeds = parse_int_list(a.seeds);

    json per_seed = json::array();
    std::vector<std::string> csv;
    int64_t auc_wins = 0;
    for (int64_t s : seeds) {
        uint64_t seed = static_cast<uint64_t>(s);
        luq::CalibrationSet set =
            generate_calibration(stack, a.n_seqs, a.seq_len, a.alpha, seed, 0, 0);
        auto [calib_part, eval_part] = luq::split_holdout(set, a.holdout, seed);
        luq::ActivationSet acts = luq::capture_activations(stack, calib_part);
        luq::EntropyProfile prof = luq::layer_entropy_profile(acts, a.entropy_k, seed);
        luq::OrderingComparison cmp = luq::compare_orderings(
            stack, prof.pi, calib_part, eval_part, ks, a.qf.to_config(), a.metric);
        if (cmp.auc_low >= cmp.auc_high) ++auc_wins;
        json j = cmp.to_json();
        j["seed"] = seed;
        j["pi"] = prof.pi;
        per_seed.push_back(j);
        for (size_t i = 0; i < ks.size(); ++i) {
            std::ostringstream lo, hi;
            lo << ks[i] << ",low_first," << cmp.low_first[i] << "," << a.metric << ","
               << seed;
            hi << ks[i] << ",high_first," << cmp.high_first[i] << "," << a.metric << ","
               << seed;
            csv.push_back(lo.str());
            csv.push_back(hi.str());
        }
    }
    json out = {{"seeds", seeds},
                {"auc_wins_low_first", auc_wins},
                {"runs", per_seed}};
    write_json_file(out, a.out + ".json");
    write_csv(a.out + ".csv", "k,ordering,score,metric,seed", csv);
    write_run_echo("ablate-order",
                   {{"model", a.model}, {"k_steps", a.k_steps}, {"n_seqs", a.n_seqs},
                    {"seq_len", a.seq_len}, {"alpha", a.alpha}, {"holdout", a.holdout},
                    {"entropy_k", a.entropy_k}, {"seeds", a.seeds},
                    {"metric", a.metric}, {"quant", a.qf.to_json()}, {"out", a.out}},
                   a.out);
    std::cout << "low-entropy-first AUC wins: " << auc_wins << "/" << seeds.size()
              << "\n";
    return 0;
}

struct AblateCalibArgs {
    std::string model;
    std::string alphas = "0,0.5";
    int64_t k = -1;  // -1 -> L/2
    int64_t n_seqs = 16, seq_len = 32;
    double holdout = 0.25;
    int64_t entropy_k = 24;
    std::string seeds = "1,2,3,4,5,6,7,8,9,10";
    std::string metric = "accuracy";
    QuantFlags qf;
    std::string out;
};

int cmd_ablate_calib(const AblateCalibArgs& a) {
    luq::LayerStack stack = luq::LayerStack::from_container(luq::load_container(a.model));
    int64_t L = stack.manifest.num_layers;
    int64_t k = a.k >= 0 ? a.k : L / 2;
    std::vector<double> alphas = parse_double_list(a.alphas);
    std::vector<int64_t> seeds = parse_int_list(a.seeds);

    json per_seed = json::array();
    std::vector<std::string> csv;
    for (int64_t s : seeds) {
        uint64_t seed = static_cast<uint64_t>(s);
        // eval split is mixed-modality and shared across alphas
        luq::CalibrationSet mixed =
            generate_calibration(stack, a.n_seqs, a.seq_len, 0.5, seed, 0, 0);
        auto [calib_ref, eval_part] = luq::split_holdout(mixed, a.holdout, seed);
        luq::ActivationSet acts = luq::capture_activations(stack, calib_ref);
        luq::EntropyProfile prof = luq::layer_entropy_profile(acts, a.entropy_k, seed);
        luq::QuantPlan plan = luq::make_plan(prof.pi, k, a.qf.q_low, a.qf.q_high);

        auto text_pool = luq::make_text_pool(stack, 4 * a.n_seqs, a.seq_len,
                                             luq::derive_seed(seed, 11));
        auto mm_pool = luq::make_mm_pool(stack, 4 * a.n_seqs, a.seq_len,
                                         luq::derive_seed(seed, 12));
        std::vector<double> scores =
            luq::compare_calibration(stack, text_pool, mm_pool, alphas, plan, a.n_seqs,
                                     a.seq_len, seed, eval_part, a.qf.to_config(),
                                     a.metric);
        json j = {{"seed", seed}, {"alphas", alphas}, {"scores", scores}, {"k", k}};
        per_seed.push_back(j);
        for (size_t i = 0; i < alphas.size(); ++i) {
            std::ostringstream os;
            os << k << "," << alphas[i] << "," << scores[i] << "," << a.metric << ","
               << seed;
            csv.push_back(os.str());
        }
    }
    write_json_file({{"seeds", seeds}, {"k", k}, {"runs", per_seed}}, a.out + ".json");
    write_csv(a.out + ".csv", "k,alpha,score,metric,seed", csv);
    write_run_echo("ablate-calib",
                   {{"model", a.model}, {"alphas", a.alphas}, {"k", a.k},
                    {"n_seqs", a.n_seqs}, {"seq_len", a.seq_len},
                    {"holdout", a.holdout}, {"entropy_k", a.entropy_k},
                    {"seeds", a.seeds}, {"metric", a.metric},
                    {"quant", a.qf.to_json()}, {"out", a.out}},
                   a.out);
    std::cout << "wrote " << a.out << ".csv\n";
    return 0;
}

int cmd_rerun(const std::string& run_path) {
    json run = read_json_file(run_path);
    std::string sub = run.at("subcommand").get<std::string>();
    const json& cfg = run.at("config");

    std::vector<std::string> args = {sub};
    auto add = [&](const std::string& flag, const json& v) {
        if (v.is_boolean()) {
            if (v.get<bool>()) args.push_back(flag);
            return;
        }
        std::string s = v.is_string() ? v.get<std::string>() : v.dump();
        if (s.empty()) return;
        args.push_back(flag);
        args.push_back(s);
    };
    for (auto& [key, val] : cfg.items()) {
        if (key == "quant") {
            for (auto& [qk, qv] : val.items()) {
                std::string flag = "--" + qk;
                for (auto& ch : flag)
                    if (ch == '_') ch = '-';
                add(flag, qv);
            }
            continue;
        }
        std::string flag = "--" + key;
        for (auto& ch : flag)
            if (ch == '_') ch = '-';
        add(flag, val);
    }
    return dispatch(args);
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"layerwise ultra-low bit quantization pipeline"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* csynth = app.add_subcommand("synth", "generate a synthetic layer stack");
    csynth->add_option("--L", synth.L);
    csynth->add_option("--d", synth.d);
    csynth->add_option("--heads", synth.heads);
    csynth->add_option("--ff", synth.ff);
    csynth->add_option("--vocab", synth.vocab);
    csynth->add_option("--profile", synth.profile, "per-layer MLP ranks, comma list");
    csynth->add_option("--seed", synth.seed);
    csynth->add_flag("--no-pos", synth.no_pos);
    csynth->add_option("--mlp-gain", synth.mlp_gain);
    csynth->add_option("--act-gain", synth.act_gain);
    csynth->add_option("--attn-scale", synth.attn_scale);
    csynth->add_option("--depth-growth", synth.depth_growth);
    csynth->add_option("--embed-dims", synth.embed_dims,
                       "token embedding subspace width (0 = full)");
    csynth->add_option("--out", synth.out)->required();

    CalibArgs calib;
    auto* ccalib = app.add_subcommand("calib", "build a mixed-modal calibration set");
    ccalib->add_option("--model", calib.model)->required()->check(CLI::ExistingFile);
    ccalib->add_option("--n-seqs", calib.n_seqs);
    ccalib->add_option("--seq-len", calib.seq_len);
    ccalib->add_option("--alpha", calib.alpha);
    ccalib->add_option("--seed", calib.seed);
    ccalib->add_option("--text-pool", calib.text_pool);
    ccalib->add_option("--mm-pool", calib.mm_pool);
    ccalib->add_option("--out", calib.out)->required();

    EntropyArgs entropy;
    auto* centropy = app.add_subcommand("entropy", "profile per-layer activation entropy");
    centropy->add_option("--model", entropy.model)->required()->check(CLI::ExistingFile);
    centropy->add_option("--calib", entropy.calib)->required()->check(CLI::ExistingFile);
    centropy->add_option("--k", entropy.k);
    centropy->add_option("--stability", entropy.stability,
                         "stability.json supplying the default K");
    centropy->add_option("--seed", entropy.seed);
    centropy->add_option("--out", entropy.out)->required();

    StabilityArgs stability;
    auto* cstab = app.add_subcommand("stability", "rank stability curve over a K grid");
    cstab->add_option("--model", stability.model)->required()->check(CLI::ExistingFile);
    cstab->add_option("--calib", stability.calib)->required()->check(CLI::ExistingFile);
    cstab->add_option("--k-grid", stability.grid, "lo:hi:step");
    cstab->add_option("--seed", stability.seed);
    cstab->add_option("--out", stability.out)->required();

    PlanArgs plan;
    auto* cplan = app.add_subcommand("plan", "build a quantization plan");
    cplan->add_option("--model", plan.model)->required()->check(CLI::ExistingFile);
    cplan->add_option("--entropy", plan.entropy)->required()->check(CLI::ExistingFile);
    cplan->add_option("--calib", plan.calib);
    cplan->add_option("--mode", plan.mode, "threshold|budget|fixed-k");
    cplan->add_option("--k", plan.k);
    cplan->add_option("--tau", plan.tau);
    cplan->add_option("--search", plan.search, "greedy|binary");
    cplan->add_option("--budget-bytes", plan.budget_bytes);
    cplan->add_option("--holdout", plan.holdout);
    cplan->add_option("--metric", plan.metric);
    cplan->add_option("--seed", plan.seed);
    plan.qf.attach(cplan);
    cplan->add_option("--out", plan.out)->required();

    QuantizeArgs quant;
    auto* cquant = app.add_subcommand("quantize", "quantize a stack under a plan");
    cquant->add_option("--model", quant.model)->required()->check(CLI::ExistingFile);
    cquant->add_option("--calib", quant.calib)->required()->check(CLI::ExistingFile);
    cquant->add_option("--plan", quant.plan)->required()->check(CLI::ExistingFile);
    quant.qf.attach(cquant);
    cquant->add_option("--out", quant.out)->required();

    EvalArgs eval;
    auto* ceval = app.add_subcommand("eval", "score a model on a held-out split");
    ceval->add_option("--model", eval.model)->required()->check(CLI::ExistingFile);
    ceval->add_option("--calib", eval.calib)->required()->check(CLI::ExistingFile);
    ceval->add_option("--holdout", eval.holdout);
    ceval->add_option("--metric", eval.metric);
    ceval->add_option("--seed", eval.seed);
    ceval->add_option("--out", eval.out)->required();

    CurveArgs curve;
    auto* ccurve = app.add_subcommand("curve", "performance vs bit-width trade-off");
    ccurve->add_option("--model", curve.model)->required()->check(CLI::ExistingFile);
    ccurve->add_option("--calib", curve.calib)->required()->check(CLI::ExistingFile);
    ccurve->add_option("--entropy", curve.entropy)->required()->check(CLI::ExistingFile);
    ccurve->add_option("--k-steps", curve.k_steps, "comma list, default 0..L");
    ccurve->add_option("--holdout", curve.holdout);
    ccurve->add_option("--metric", curve.metric);
    ccurve->add_option("--seed", curve.seed);
    curve.qf.attach(ccurve);
    ccurve->add_option("--out", curve.out)->required();

    AblateOrderArgs aorder;
    auto* corder = app.add_subcommand("ablate-order",
                                      "low- vs high-entropy-first ordering ablation");
    corder->add_option("--model", aorder.model)->required()->check(CLI::ExistingFile);
    corder->add_option("--k-steps", aorder.k_steps);
    corder->add_option("--n-seqs", aorder.n_seqs);
    corder->add_option("--seq-len", aorder.seq_len);
    corder->add_option("--alpha", aorder.alpha);
    corder->add_option("--holdout", aorder.holdout);
    corder->add_option("--entropy-k", aorder.entropy_k);
    corder->add_option("--seeds", aorder.seeds);
    corder->add_option("--metric", aorder.metric);
    aorder.qf.attach(corder);
    corder->add_option("--out", aorder.out)->required();

    AblateCalibArgs acalib;
    auto* ccal = app.add_subcommand("ablate-calib", "calibration mixing ratio ablation");
    ccal->add_option("--model", acalib.model)->required()->check(CLI::ExistingFile);
    ccal->add_option("--alphas", acalib.alphas);
    ccal->add_option("--k", acalib.k);
    ccal->add_option("--n-seqs", acalib.n_seqs);
    ccal->add_option("--seq-len", acalib.seq_len);
    ccal->add_option("--holdout", acalib.holdout);
    ccal->add_option("--entropy-k", acalib.entropy_k);
    ccal->add_option("--seeds", acalib.seeds);
    ccal->add_option("--metric", acalib.metric);
    acalib.qf.attach(ccal);
    ccal->add_option("--out", acalib.out)->required();

    std::string rerun_path;
    auto* crerun = app.add_subcommand("rerun", "replay a run from its run.json");
    crerun->add_option("run_json", rerun_path)->required()->check(CLI::ExistingFile);

    // CLI11 parses argv-style (reversed, program name stripped)
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);

    if (csynth->parsed()) return cmd_synth(synth);
    if (ccalib->parsed()) return cmd_calib(calib);
    if (centropy->parsed()) return cmd_entropy(entropy);
    if (cstab->parsed()) return cmd_stability(stability);
    if (cplan->parsed()) return cmd_plan(plan);
    if (cquant->parsed()) return cmd_quantize(quant);
    if (ceval->parsed()) return cmd_eval(eval);
    if (ccurve->parsed()) return cmd_curve(curve);
    if (corder->parsed()) return cmd_ablate_order(aorder);
    if (ccal->parsed()) return cmd_ablate_calib(acalib);
    if (crerun->parsed()) return cmd_rerun(rerun_path);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(args);
    } catch (const CLI::CallForHelp&) {
        CLI::App help{"layerwise ultra-low bit quantization pipeline"};
        std::cout << "usage: luq <synth|calib|entropy|stability|plan|quantize|eval|"
                     "curve|ablate-order|ablate-calib|rerun> [options]\n"
                     "run `luq <subcommand> --help` for details\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const luq::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 1;
    }
}
