// quantlab CLI — pipeline driver exposing every toolkit stage as a
// subcommand. Batch-only: all randomness flows from --seed, no timestamps
// are ever emitted, and every output JSON embeds provenance
// {tool_version, resolved_config, input_file_hashes} so a report is
// traceable to the exact invocation and input bytes that produced it.
//
// Exit codes: 0 success, 1 validation error (bad flags or argument values),
// 2 runtime error (missing/corrupt files, failed runs).
#include "CLI11.hpp"

#include "quantlab/analysis.hpp"
#include "quantlab/calibration.hpp"
#include "quantlab/json_writer.hpp"
#include "quantlab/mixed_precision.hpp"
#include "quantlab/model.hpp"
#include "quantlab/model_io.hpp"
#include "quantlab/ptq.hpp"
#include "quantlab/train.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using namespace quantlab;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct CommonOpts {
    uint64_t seed = 42;
    std::string out;
    std::string format = "json";
};

void add_common(CLI::App* sub, CommonOpts& c, const std::string& out_default,
                const std::string& out_desc) {
    c.out = out_default;
    sub->add_option("--seed", c.seed, "Seed for all randomness in this run")
        ->capture_default_str();
    sub->add_option("--out", c.out, out_desc)->capture_default_str();
    sub->add_option("--format", c.format, "Stdout report format (files are always JSON)")
        ->check(CLI::IsMember({"json", "text"}))
        ->capture_default_str();
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// provenance

struct RunContext {
    std::vector<std::pair<std::string, std::string>> config;  // key -> raw JSON
    std::vector<std::string> inputs;                          // files to hash

    void str(const std::string& k, std::string_view v) {
        config.emplace_back(k, "\"" + JsonWriter::escape(v) + "\"");
    }
    void num(const std::string& k, double v) {
        config.emplace_back(k, JsonWriter::format_double(v));
    }
    void integer(const std::string& k, int64_t v) { config.emplace_back(k, std::to_string(v)); }
    void uinteger(const std::string& k, uint64_t v) { config.emplace_back(k, std::to_string(v)); }
    void boolean(const std::string& k, bool v) { config.emplace_back(k, v ? "true" : "false"); }
    void common(const CommonOpts& c) {
        uinteger("seed", c.seed);
        str("out", c.out);
        str("format", c.format);
    }
    void input(const std::string& path) { inputs.push_back(path); }
};


// Provenance identity hash: FNV-1a 64 over the file bytes. CRC32 cannot be
// used here — the model container ends in its own CRC32, and because CRC is
// affine over GF(2) the trailing checksum cancels every content difference:
// all valid containers of equal length get the same whole-file CRC no
// matter what prefix or length framing is added. FNV-1a's multiply is
// nonlinear, so it has no such cancellation. (crc32_ieee remains the
// in-container integrity check; this hash only identifies input files.)
std::string provenance_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return fmt("fnv1a64:%016llX", static_cast<unsigned long long>(h));
}

void write_provenance(JsonWriter& w, const RunContext& ctx) {
    w.key("provenance");
    w.begin_object();
    w.kv("tool_version", kToolVersion);
    w.key("resolved_config");
    w.begin_object();
    for (const auto& [k, v] : ctx.config) {
        w.key(k);
        w.raw(v);
    }
    w.end_object();
    w.key("input_file_hashes");
    w.begin_object();
    for (const std::string& path : ctx.inputs) {
        w.kv(path, provenance_hash(path));
    }
    w.end_object();
    w.end_object();
}

// ---------------------------------------------------------------------------
// small IO helpers

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void emit(const CommonOpts& c, const JsonWriter& report, const std::vector<std::string>& text) {
    if (c.format == "json") {
        std::cout << report.str() << "\n";
    } else {
        for (const std::string& line : text) std::cout << line << "\n";
    }
}

// ---------------------------------------------------------------------------
// shared fragments

void write_stats_array(JsonWriter& w, const std::vector<TensorStats>& stats) {
    w.begin_array();
    for (size_t li = 0; li < stats.size(); ++li) {
        const TensorStats& s = stats[li];
        w.begin_object();
        w.kv("layer_index", static_cast<uint64_t>(li));
        w.kv("x_min", static_cast<double>(s.x_min));
        w.kv("x_max", static_cast<double>(s.x_max));
        w.kv("mean", s.mean);
        w.kv("variance", s.variance);
        w.kv("second_moment", s.second_moment);
        w.kv("count", static_cast<uint64_t>(s.count));
        w.end_object();
    }
    w.end_array();
}

RangeSpec parse_range_mode(const std::string& mode) {
    RangeSpec spec;
    if (mode == "minmax") return spec;
    if (mode.rfind("pct:", 0) == 0) {
        const std::string num = mode.substr(4);
        size_t used = 0;
        double p = 0.0;
        try {
            p = std::stod(num, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("--mode pct:P needs a number, got '" + mode + "'");
        }
        if (used != num.size()) {
            throw std::invalid_argument("--mode pct:P needs a number, got '" + mode + "'");
        }
        spec.mode = RangeMode::Percentile;
        spec.percentile = p;
        return spec;
    }
    throw std::invalid_argument("--mode must be minmax or pct:P, got '" + mode + "'");
}

void check_bits_flag(int bits) {
    if (bits < 2 || bits > 16) {
        throw std::invalid_argument("bits must be in [2,16], got " + std::to_string(bits));
    }
}

// ---------------------------------------------------------------------------
// gen-model

struct GenModelOpts {
    CommonOpts common;
    std::string scale;
};

int run_gen_model(const GenModelOpts& o) {
    ZooScale scale = ZooScale::LargeDesk;
    if (o.scale == "small") scale = ZooScale::Small;
    if (o.scale == "medium") scale = ZooScale::Medium;
    const ModelGraph model = build_model_zoo(scale, o.common.seed);
    save_model(model, o.common.out);

    RunContext ctx;
    ctx.str("subcommand", "gen-model");
    ctx.str("scale", o.scale);
    ctx.common(o.common);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.key("artifacts");
    w.begin_object();
    w.kv("model", o.common.out);
    w.kv("model_hash", provenance_hash(o.common.out));
    w.end_object();
    w.kv("param_count", static_cast<uint64_t>(model.param_count()));
    w.kv("layer_count", static_cast<uint64_t>(model.layers.size()));
    w.kv("input_dim", static_cast<uint64_t>(model.input_dim()));
    w.kv("output_dim", static_cast<uint64_t>(model.output_dim()));
    w.end_object();

    emit(o.common, w,
         {fmt("gen-model: scale=%s seed=%llu", o.scale.c_str(),
              static_cast<unsigned long long>(o.common.seed)),
          fmt("  wrote %s (%llu params, %llu layers)", o.common.out.c_str(),
              static_cast<unsigned long long>(model.param_count()),
              static_cast<unsigned long long>(model.layers.size()))});
    return 0;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOpts {
    CommonOpts common;
    std::string task = "teacher";
    uint64_t n = 256;
    uint64_t dims = 64;
    uint64_t classes = 3;
    double noise = 0.01;
};

int run_gen_data(const GenDataOpts& o) {
    LabeledSet set;
    if (o.task == "teacher") {
        set = make_teacher_task(o.dims, o.n, o.common.seed, static_cast<float>(o.noise));
    } else {
        set = make_blobs_task(o.dims, o.n, o.classes, o.common.seed);
    }
    save_labeled_set(set, o.common.out);
    const std::string targets_path = o.common.out + ".targets";

    RunContext ctx;
    ctx.str("subcommand", "gen-data");
    ctx.str("task", o.task);
    ctx.uinteger("n", o.n);
    ctx.uinteger("dims", o.dims);
    ctx.uinteger("classes", o.classes);
    ctx.num("noise", o.noise);
    ctx.common(o.common);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.key("artifacts");
    w.begin_object();
    w.kv("inputs", o.common.out);
    w.kv("inputs_hash", provenance_hash(o.common.out));
    w.kv("targets", targets_path);
    w.kv("targets_hash", provenance_hash(targets_path));
    w.end_object();
    w.kv("samples", static_cast<uint64_t>(set.size()));
    w.kv("dims", static_cast<uint64_t>(set.inputs.dim(1)));
    w.kv("classification", set.classification);
    w.end_object();

    emit(o.common, w,
         {fmt("gen-data: task=%s n=%llu dims=%llu seed=%llu", o.task.c_str(),
              static_cast<unsigned long long>(o.n), static_cast<unsigned long long>(o.dims),
              static_cast<unsigned long long>(o.common.seed)),
          fmt("  wrote %s and %s", o.common.out.c_str(), targets_path.c_str())});
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    CommonOpts common;
    std::string model;
    std::string data;
    double lr = 0.01;
    uint64_t steps = 1000;
    uint64_t batch = 32;
    bool qat = false;
    int bits = 8;
    int refresh = 50;
    std::string loss = "mse";
};

int run_train(const TrainOpts& o) {
    if (o.qat) check_bits_flag(o.bits);
    const ModelGraph initial = load_model(o.model);
    const LabeledSet data = load_labeled_set(o.data, o.loss == "ce");

    TrainConfig cfg;
    cfg.learning_rate = o.lr;
    cfg.batch_size = o.batch;
    cfg.max_steps = o.steps;
    cfg.seed = o.common.seed;
    cfg.loss = o.loss == "ce" ? LossKind::CrossEntropy : LossKind::MSE;
    if (o.qat) cfg.fake_quant = FakeQuantConfig{o.bits, o.refresh};

    const TrainOutcome outcome = train(initial, data, cfg);

    fs::create_directories(o.common.out.empty() ? "." : o.common.out);
    const fs::path dir(o.common.out.empty() ? "." : o.common.out);
    const std::string model_path = (dir / "model_trained.qtm").string();
    const std::string log_path = (dir / "trainlog.jsonl").string();
    const std::string report_path = (dir / "train_report.json").string();

    save_model(outcome.model, model_path);

    std::string log_lines;
    for (const TrainStep& s : outcome.log.steps) {
        JsonWriter lw;
        lw.begin_object();
        lw.kv("step", static_cast<uint64_t>(s.step));
        lw.kv("loss", s.loss);
        lw.kv("lr", s.lr);
        lw.kv("quant_refresh", s.quant_refresh);
        lw.end_object();
        log_lines += lw.str();
        log_lines += '\n';
    }
    write_text_file(log_path, log_lines);

    const EvalMetrics eval = evaluate_model(outcome.model, data, cfg.loss);

    RunContext ctx;
    ctx.str("subcommand", "train");
    ctx.str("model", o.model);
    ctx.str("data", o.data);
    ctx.num("lr", o.lr);
    ctx.uinteger("steps", o.steps);
    ctx.uinteger("batch", o.batch);
    ctx.boolean("qat", o.qat);
    ctx.integer("bits", o.bits);
    ctx.integer("refresh", o.refresh);
    ctx.str("loss", o.loss);
    ctx.common(o.common);
    ctx.input(o.model);
    ctx.input(o.data);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.kv("schema_version", 1);
    w.key("summary");
    write_train_summary(w, outcome.log);
    w.key("final_eval");
    w.begin_object();
    w.kv("loss", eval.loss);
    if (eval.has_accuracy) {
        w.kv("accuracy", eval.accuracy);
    } else {
        w.kv_null("accuracy");
    }
    w.end_object();
    w.key("artifacts");
    w.begin_object();
    w.kv("model", model_path);
    w.kv("trainlog", log_path);
    w.end_object();
    w.end_object();
    write_text_file(report_path, w.str() + "\n");

    const double final_loss =
        outcome.log.steps.empty() ? 0.0 : outcome.log.steps.back().loss;
    emit(o.common, w,
         {fmt("train: %llu steps (%s), final batch loss %.6g, eval loss %.6g",
              static_cast<unsigned long long>(outcome.log.steps_run),
              outcome.log.converged ? "converged" : "step limit", final_loss, eval.loss),
          fmt("  wrote %s, %s, %s", model_path.c_str(), log_path.c_str(),
              report_path.c_str())});
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOpts {
    CommonOpts common;
    std::string model;
    std::string data;
    std::string mode = "minmax";
};

int run_calibrate(const CalibrateOpts& o) {
    const RangeSpec spec = parse_range_mode(o.mode);
    const ModelGraph model = load_model(o.model);
    const CalibrationSet cal = load_calibration(o.data);

    std::vector<TensorStats> weight_stats;
    for (const Layer& layer : model.layers) {
        weight_stats.push_back(compute_range({layer.weights}, spec));
    }
    // Activation stats come from a streaming collector that never keeps the
    // per-layer value history, so they are always plain min/max.
    const std::vector<TensorStats> act_stats = activation_stats(model, cal);

    RunContext ctx;
    ctx.str("subcommand", "calibrate");
    ctx.str("model", o.model);
    ctx.str("data", o.data);
    ctx.str("mode", o.mode);
    ctx.common(o.common);
    ctx.input(o.model);
    ctx.input(o.data);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.kv("schema_version", 1);
    w.key("range_mode");
    w.begin_object();
    w.kv("mode", spec.mode == RangeMode::MinMax ? "minmax" : "percentile");
    w.kv("percentile", spec.percentile);
    w.end_object();
    w.key("weights");
    write_stats_array(w, weight_stats);
    w.key("activations");
    write_stats_array(w, act_stats);
    w.end_object();
    write_text_file(o.common.out, w.str() + "\n");

    std::vector<std::string> text;
    text.push_back(fmt("calibrate: mode=%s -> %s", o.mode.c_str(), o.common.out.c_str()));
    text.push_back("layer  weight range              activation range");
    for (size_t li = 0; li < weight_stats.size(); ++li) {
        text.push_back(fmt("%5zu  [%11.4e,%11.4e]  [%11.4e,%11.4e]", li,
                           static_cast<double>(weight_stats[li].x_min),
                           static_cast<double>(weight_stats[li].x_max),
                           static_cast<double>(act_stats[li].x_min),
                           static_cast<double>(act_stats[li].x_max)));
    }
    emit(o.common, w, text);
    return 0;
}

// ---------------------------------------------------------------------------
// ptq

struct PtqOpts {
    CommonOpts common;
    std::string model;
    std::string data;
    int bits = 8;
    std::string scale_rule = "alg1";
    bool gamma = false;
    bool global_range = false;
    std::string scheme = "affine";
    bool quantize_biases = false;
    double target_alpha = 0.0;  // 0 = unset
    std::string mode = "minmax";
};

int run_ptq_cmd(const PtqOpts& o) {
    check_bits_flag(o.bits);
    PtqConfig cfg;
    cfg.bits = o.bits;
    cfg.range = parse_range_mode(o.mode);
    cfg.scale_rule = o.scale_rule == "alg1"   ? ScaleRule::Algorithm1
                     : o.scale_rule == "thm1" ? ScaleRule::Theorem1
                                              : ScaleRule::MseOracle;
    cfg.use_gamma = o.gamma;
    cfg.per_tensor = !o.global_range;
    cfg.scheme = o.scheme == "log" ? Scheme::Log : Scheme::Affine;
    cfg.quantize_biases = o.quantize_biases;
    if (o.target_alpha != 0.0) cfg.target_alpha = o.target_alpha;

    const ModelGraph model = load_model(o.model);
    const CalibrationSet cal = load_calibration(o.data);
    const PtqResult result = run_ptq(model, cal, cfg);

    fs::create_directories(o.common.out.empty() ? "." : o.common.out);
    const fs::path dir(o.common.out.empty() ? "." : o.common.out);
    const std::string model_path = (dir / "model_ptq.qtm").string();
    const std::string report_path = (dir / "ptq_report.json").string();
    save_model(result.model, model_path);

    RunContext ctx;
    ctx.str("subcommand", "ptq");
    ctx.str("model", o.model);
    ctx.str("data", o.data);
    ctx.integer("bits", o.bits);
    ctx.str("scale_rule", o.scale_rule);
    ctx.boolean("gamma", o.gamma);
    ctx.boolean("global_range", o.global_range);
    ctx.str("scheme", o.scheme);
    ctx.boolean("quantize_biases", o.quantize_biases);
    ctx.num("target_alpha", o.target_alpha);
    ctx.str("mode", o.mode);
    ctx.common(o.common);
    ctx.input(o.model);
    ctx.input(o.data);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.kv("schema_version", 1);
    w.key("report");
    write_ptq_report(w, result.report);
    w.key("artifacts");
    w.begin_object();
    w.kv("model", model_path);
    w.end_object();
    w.end_object();
    write_text_file(report_path, w.str() + "\n");

    std::vector<std::string> text;
    text.push_back(fmt("ptq: bits=%d rule=%s gamma=%s -> %s", o.bits, o.scale_rule.c_str(),
                       o.gamma ? "on" : "off", model_path.c_str()));
    text.push_back("layer  rel_error     gamma");
    for (size_t li = 0; li < result.report.layer_errors.size(); ++li) {
        text.push_back(fmt("%5zu  %11.4e  %8.5f", li,
                           result.report.layer_errors[li].relative_eq,
                           static_cast<double>(result.report.layer_gammas[li])));
    }
    text.push_back(fmt("size: %llu B -> %llu B  alpha=%.4f",
                       static_cast<unsigned long long>(result.report.original_bytes),
                       static_cast<unsigned long long>(result.report.quantized_bytes),
                       result.report.alpha_achieved));
    text.push_back(fmt("bound_product: %.6e", result.report.bound_product));
    emit(o.common, w, text);
    return 0;
}

// ---------------------------------------------------------------------------
// allocate

struct AllocateOpts {
    CommonOpts common;
    std::string model;
    std::string data;
    int budget = 0;
    int bmin = 2;
    int bmax = 16;
    std::string method = "probe";
    int probe_bits = 4;
    std::string loss = "mse";
};

int run_allocate(const AllocateOpts& o) {
    const ModelGraph model = load_model(o.model);
    const LabeledSet data = load_labeled_set(o.data, o.loss == "ce");
    const SensitivityMethod method = o.method == "probe" ? SensitivityMethod::LossProbe
                                                         : SensitivityMethod::GradNormProxy;
    const std::vector<LayerSensitivity> sens =
        estimate_sensitivity(model, data, o.probe_bits, method);
    const AllocationPlan plan = solve_allocation(sens, o.budget, o.bmin, o.bmax);

    RunContext ctx;
    ctx.str("subcommand", "allocate");
    ctx.str("model", o.model);
    ctx.str("data", o.data);
    ctx.integer("budget", o.budget);
    ctx.integer("bmin", o.bmin);
    ctx.integer("bmax", o.bmax);
    ctx.str("method", o.method);
    ctx.integer("probe_bits", o.probe_bits);
    ctx.str("loss", o.loss);
    ctx.common(o.common);
    ctx.input(o.model);
    ctx.input(o.data);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.kv("schema_version", 1);
    w.key("allocation");
    write_allocation(w, sens, plan);
    w.end_object();
    write_text_file(o.common.out, w.str() + "\n");

    std::vector<std::string> text;
    text.push_back(fmt("allocate: budget=%d method=%s -> %s", o.budget, o.method.c_str(),
                       o.common.out.c_str()));
    text.push_back("layer  alpha         sigma2        real_bits  bits");
    for (size_t i = 0; i < sens.size(); ++i) {
        text.push_back(fmt("%5zu  %11.4e  %11.4e  %9.4f  %4d", sens[i].layer_index,
                           sens[i].alpha, sens[i].sigma2, plan.real_bits[i], plan.bits[i]));
    }
    text.push_back(fmt("lambda=%.6e feasible=%s", plan.lambda, plan.feasible ? "yes" : "no"));
    emit(o.common, w, text);
    return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOpts {
    CommonOpts common;
    std::string model;
    std::string quantized;
    std::string data;
    int act_bits = 0;  // 0 = match weight bits
};

bool is_linear_chain(const ModelGraph& m) {
    for (const Layer& layer : m.layers) {
        if (layer.activation != Activation::None) return false;
        if (layer.dropout_rate != 0.0f) return false;
        for (float b : layer.bias.data()) {
            if (b != 0.0f) return false;
        }
    }
    return true;
}

int run_analyze(const AnalyzeOpts& o) {
    const ModelGraph model = load_model(o.model);
    const ModelGraph quantized = load_model(o.quantized);
    const CalibrationSet cal = load_calibration(o.data);

    const SizeReport size = size_report(model, quantized);

    int b_w = 0;
    for (const Layer& layer : quantized.layers) {
        b_w = std::max(b_w, layer.quantized ? layer.quantized->params.bits : 32);
    }
    if (b_w == 0) b_w = 32;
    const int b_a = o.act_bits > 0 ? o.act_bits : b_w;
    const Tensor batch = cal.stacked();
    const double c_f = static_cast<double>(forward(model, batch, RunMode::Eval).macs);
    const CostEstimate cost = cost_model(b_w, b_a, 32, 32, c_f);

    std::optional<ErrorBudget> budget;
    std::string budget_note;
    if (is_linear_chain(model) && is_linear_chain(quantized)) {
        std::vector<Tensor> probes;
        const size_t n_probes = std::min<size_t>(8, batch.dim(0));
        for (size_t i = 0; i < n_probes; ++i) {
            std::vector<float> row(batch.dim(1));
            for (size_t j = 0; j < row.size(); ++j) row[j] = batch.at2(i, j);
            const size_t cols = row.size();
            probes.push_back(Tensor::from_data({cols}, std::move(row)));
        }
        budget = verify_accumulation(model, quantized, probes);
    } else {
        budget_note =
            "model is not a bias-free linear chain; the multiplicative accumulation "
            "bound does not apply, so the check was skipped";
    }

    RunContext ctx;
    ctx.str("subcommand", "analyze");
    ctx.str("model", o.model);
    ctx.str("quantized", o.quantized);
    ctx.str("data", o.data);
    ctx.integer("act_bits", o.act_bits);
    ctx.common(o.common);
    ctx.input(o.model);
    ctx.input(o.quantized);
    ctx.input(o.data);

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.kv("schema_version", 1);
    w.key("cost");
    write_cost_estimate(w, cost);
    w.key("error_budget");
    if (budget) {
        write_error_budget(w, *budget);
    } else {
        w.null();
    }
    if (budget_note.empty()) {
        w.kv_null("error_budget_note");
    } else {
        w.kv("error_budget_note", budget_note);
    }
    w.key("size");
    write_size_report(w, size);
    w.end_object();
    write_text_file(o.common.out, w.str() + "\n");

    std::vector<std::string> text;
    text.push_back(fmt("analyze: %s vs %s -> %s", o.model.c_str(), o.quantized.c_str(),
                       o.common.out.c_str()));
    text.push_back(fmt("size: original %llu B, quantized %llu B, alpha %.4f, reduction %.2f%%",
                       static_cast<unsigned long long>(size.original_bytes),
                       static_cast<unsigned long long>(size.quantized_bytes), size.alpha,
                       size.reduction_pct));
    text.push_back(fmt("cost: C_f=%.6g MACs, b_w=%d, b_a=%d -> C_q=%.6g (reduction %.4f%%)",
                       cost.flops_fp, cost.b_w, cost.b_a, cost.c_q, cost.reduction_pct));
    if (budget) {
        text.push_back(fmt("error budget: bound %.6e, measured %.6e", budget->bound_e_t,
                           budget->measured_rel_error));
    } else {
        text.push_back("error budget: skipped (" + budget_note + ")");
    }
    emit(o.common, w, text);
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
    CommonOpts common;
    std::string dir = ".";
};

size_t skip_ws(const std::string& t, size_t i) {
    while (i < t.size() && (t[i] == ' ' || t[i] == '\t' || t[i] == '\n' || t[i] == '\r')) ++i;
    return i;
}

size_t skip_string(const std::string& t, size_t i) {  // t[i] == '"'
    ++i;
    while (i < t.size()) {
        if (t[i] == '\\') {
            i += 2;
        } else if (t[i] == '"') {
            return i + 1;
        } else {
            ++i;
        }
    }
    throw std::runtime_error("unterminated string in JSON");
}

size_t skip_value(const std::string& t, size_t i) {
    i = skip_ws(t, i);
    if (i >= t.size()) throw std::runtime_error("truncated JSON value");
    const char c = t[i];
    if (c == '"') return skip_string(t, i);
    if (c == '{' || c == '[') {
        int depth = 0;
        while (i < t.size()) {
            const char d = t[i];
            if (d == '"') {
                i = skip_string(t, i);
                continue;
            }
            if (d == '{' || d == '[') {
                ++depth;
            } else if (d == '}' || d == ']') {
                --depth;
                if (depth == 0) return i + 1;
            }
            ++i;
        }
        throw std::runtime_error("unbalanced JSON container");
    }
    while (i < t.size() && t[i] != ',' && t[i] != '}' && t[i] != ']' && t[i] != ' ' &&
           t[i] != '\n' && t[i] != '\t' && t[i] != '\r') {
        ++i;
    }
    return i;
}

// Exact text of the value for `key` at the top level of a JSON object.
// Sections are spliced byte-for-byte from stage outputs, never reformatted,
// so the consolidated report stays consistent with its sources.
std::optional<std::string> extract_top_level(const std::string& t, const std::string& key) {
    size_t i = skip_ws(t, 0);
    if (i >= t.size() || t[i] != '{') return std::nullopt;
    ++i;
    while (true) {
        i = skip_ws(t, i);
        if (i >= t.size() || t[i] == '}') return std::nullopt;
        if (t[i] == ',') {
            ++i;
            continue;
        }
        if (t[i] != '"') return std::nullopt;
        const size_t key_start = i;
        i = skip_string(t, i);
        const std::string k = t.substr(key_start + 1, i - key_start - 2);
        i = skip_ws(t, i);
        if (i >= t.size() || t[i] != ':') return std::nullopt;
        ++i;
        i = skip_ws(t, i);
        const size_t val_start = i;
        i = skip_value(t, i);
        if (k == key) return t.substr(val_start, i - val_start);
    }
}

int run_report(const ReportOpts& o) {
    const fs::path dir(o.dir);
    const std::string out_path =
        o.common.out.empty() ? (dir / "experiment_report.json").string() : o.common.out;

    RunContext ctx;
    ctx.str("subcommand", "report");
    ctx.str("dir", o.dir);
    ctx.common(o.common);

    std::vector<std::string> present;
    auto section = [&](const char* fname, const char* inner) -> std::string {
        const fs::path p = dir / fname;
        if (!fs::exists(p)) return "null";
        const std::string text = slurp(p.string());
        const std::optional<std::string> frag = extract_top_level(text, inner);
        if (!frag) {
            throw std::runtime_error(p.string() + " has no top-level key '" +
                                     std::string(inner) + "'");
        }
        if (std::find(present.begin(), present.end(), p.string()) == present.end()) {
            present.push_back(p.string());
            ctx.input(p.string());
        }
        return *frag;
    };

    const std::string train_frag = section("train_report.json", "summary");
    const std::string ptq_frag = section("ptq_report.json", "report");
    const std::string alloc_frag = section("plan.json", "allocation");
    const std::string cost_frag = section("analysis.json", "cost");
    const std::string budget_frag = section("analysis.json", "error_budget");
    const std::string size_frag = section("analysis.json", "size");

    JsonWriter w;
    w.begin_object();
    write_provenance(w, ctx);
    w.kv("schema_version", 1);
    w.key("train");
    w.raw(train_frag);
    w.key("ptq");
    w.raw(ptq_frag);
    w.key("allocation");
    w.raw(alloc_frag);
    w.key("cost");
    w.raw(cost_frag);
    w.key("error_budget");
    w.raw(budget_frag);
    w.key("size");
    w.raw(size_frag);
    w.key("reference_reported");
    write_reference_reported(w);
    w.end_object();
    write_text_file(out_path, w.str() + "\n");

    std::vector<std::string> text;
    text.push_back(fmt("report: consolidated %zu stage outputs from %s -> %s", present.size(),
                       o.dir.c_str(), out_path.c_str()));
    text.push_back(fmt("  train=%s ptq=%s allocation=%s analysis=%s",
                       train_frag == "null" ? "missing" : "ok",
                       ptq_frag == "null" ? "missing" : "ok",
                       alloc_frag == "null" ? "missing" : "ok",
                       size_frag == "null" ? "missing" : "ok"));
    emit(o.common, w, text);
    return 0;
}

} // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"quantlab — dense-network quantization toolkit "
                 "(PTQ, QAT, mixed-precision allocation, error and cost analysis)",
                 "quantlab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    GenModelOpts gm;
    CLI::App* c_gen_model =
        app.add_subcommand("gen-model", "Generate a reference architecture");
    c_gen_model->add_option("--scale", gm.scale, "Architecture scale")
        ->required()
        ->check(CLI::IsMember({"small", "medium", "large-desk"}));
    add_common(c_gen_model, gm.common, "model.qtm", "Output model container path");

    GenDataOpts gd;
    CLI::App* c_gen_data = app.add_subcommand("gen-data", "Generate a labeled dataset");
    c_gen_data->add_option("--task", gd.task, "Data generator")
        ->check(CLI::IsMember({"teacher", "blobs"}))
        ->capture_default_str();
    c_gen_data->add_option("--n", gd.n, "Sample count")->capture_default_str();
    c_gen_data->add_option("--dims", gd.dims, "Input dimensionality")->capture_default_str();
    c_gen_data->add_option("--classes", gd.classes, "Class count (blobs task)")
        ->capture_default_str();
    c_gen_data->add_option("--noise", gd.noise, "Target noise sigma (teacher task)")
        ->capture_default_str();
    add_common(c_gen_data, gd.common, "data.qcal",
               "Output data path (targets go to <out>.targets)");

    TrainOpts tr;
    CLI::App* c_train = app.add_subcommand("train", "Train a model (optionally QAT)");
    c_train->add_option("--model", tr.model, "Initial model container")->required();
    c_train->add_option("--data", tr.data, "Labeled dataset (QCAL pair)")->required();
    c_train->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
    c_train->add_option("--steps", tr.steps, "Max SGD steps")->capture_default_str();
    c_train->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
    c_train->add_flag("--qat", tr.qat, "Train with fake-quantized forward passes");
    c_train->add_option("--bits", tr.bits, "Fake-quantization bit width (with --qat)")
        ->capture_default_str();
    c_train->add_option("--refresh", tr.refresh, "Steps between quant param refreshes")
        ->capture_default_str();
    c_train->add_option("--loss", tr.loss, "Loss (ce treats targets as class ids)")
        ->check(CLI::IsMember({"mse", "ce"}))
        ->capture_default_str();
    add_common(c_train, tr.common, ".",
               "Output directory (model_trained.qtm, trainlog.jsonl, train_report.json)");

    CalibrateOpts ca;
    CLI::App* c_calibrate =
        app.add_subcommand("calibrate", "Collect weight/activation range statistics");
    c_calibrate->add_option("--model", ca.model, "Model container")->required();
    c_calibrate->add_option("--data", ca.data, "Calibration inputs (QCAL)")->required();
    c_calibrate->add_option("--mode", ca.mode, "Range mode: minmax or pct:P")
        ->capture_default_str();
    add_common(c_calibrate, ca.common, "stats.json", "Output stats path");

    PtqOpts pq;
    CLI::App* c_ptq = app.add_subcommand("ptq", "Post-training quantization");
    c_ptq->add_option("--model", pq.model, "Model container")->required();
    c_ptq->add_option("--data", pq.data, "Calibration inputs (QCAL)")->required();
    c_ptq->add_option("--bits", pq.bits, "Weight bit width in [2,16]")->capture_default_str();
    c_ptq->add_option("--scale-rule", pq.scale_rule, "Scale rule")
        ->check(CLI::IsMember({"alg1", "thm1", "mse"}))
        ->capture_default_str();
    c_ptq->add_flag("--gamma", pq.gamma, "Apply second-moment-restoring gamma");
    c_ptq->add_flag("--global-range", pq.global_range,
                    "Pool one range over all layers (affine only)");
    c_ptq->add_option("--scheme", pq.scheme, "Quantizer family")
        ->check(CLI::IsMember({"affine", "log"}))
        ->capture_default_str();
    c_ptq->add_flag("--quantize-biases", pq.quantize_biases,
                    "Snap biases onto the quantization grid (stored FP32)");
    c_ptq->add_option("--target-alpha", pq.target_alpha,
                      "Compression target in (0,1]; 0 leaves it unset")
        ->capture_default_str();
    c_ptq->add_option("--mode", pq.mode, "Range mode: minmax or pct:P")->capture_default_str();
    add_common(c_ptq, pq.common, ".",
               "Output directory (model_ptq.qtm, ptq_report.json)");

    AllocateOpts al;
    CLI::App* c_allocate =
        app.add_subcommand("allocate", "Mixed-precision bit allocation under a budget");
    c_allocate->add_option("--model", al.model, "Model container")->required();
    c_allocate->add_option("--data", al.data, "Labeled dataset (QCAL pair)")->required();
    c_allocate->add_option("--budget", al.budget, "Total bit budget across layers")
        ->required();
    c_allocate->add_option("--bmin", al.bmin, "Minimum per-layer bits")->capture_default_str();
    c_allocate->add_option("--bmax", al.bmax, "Maximum per-layer bits")->capture_default_str();
    c_allocate->add_option("--method", al.method, "Sensitivity estimator")
        ->check(CLI::IsMember({"probe", "gradproxy"}))
        ->capture_default_str();
    c_allocate->add_option("--probe-bits", al.probe_bits, "Bit width used for probing")
        ->capture_default_str();
    c_allocate->add_option("--loss", al.loss, "Loss (ce treats targets as class ids)")
        ->check(CLI::IsMember({"mse", "ce"}))
        ->capture_default_str();
    add_common(c_allocate, al.common, "plan.json", "Output plan path");

    AnalyzeOpts an;
    CLI::App* c_analyze =
        app.add_subcommand("analyze", "Size, cost, and error-budget analysis of a model pair");
    c_analyze->add_option("--model", an.model, "FP32 model container")->required();
    c_analyze->add_option("--quantized", an.quantized, "Quantized model container")->required();
    c_analyze->add_option("--data", an.data, "Probe inputs (QCAL)")->required();
    c_analyze->add_option("--act-bits", an.act_bits,
                          "Assumed activation bit width (0 = match weights)")
        ->capture_default_str();
    add_common(c_analyze, an.common, "analysis.json", "Output analysis path");

    ReportOpts rp;
    CLI::App* c_report =
        app.add_subcommand("report", "Consolidate stage outputs into one experiment report");
    c_report->add_option("--dir", rp.dir, "Directory holding stage outputs")
        ->capture_default_str();
    add_common(c_report, rp.common, "",
               "Output report path (default <dir>/experiment_report.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (c_gen_model->parsed()) return run_gen_model(gm);
        if (c_gen_data->parsed()) return run_gen_data(gd);
        if (c_train->parsed()) return run_train(tr);
        if (c_calibrate->parsed()) return run_calibrate(ca);
        if (c_ptq->parsed()) return run_ptq_cmd(pq);
        if (c_allocate->parsed()) return run_allocate(al);
        if (c_analyze->parsed()) return run_analyze(an);
        if (c_report->parsed()) return run_report(rp);
        return 0;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
