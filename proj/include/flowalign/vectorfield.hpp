#pragma once

// The conditional velocity-field model u(x, t, c; theta): a small MLP over
// [x | sinusoidal time features | condition embedding], with reverse-mode
// gradients, an AdamW optimizer with linear warmup, and checkpoint I/O.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowalign/numkit.hpp"

namespace flowalign {

// Condition passed to the model; kNullCondition selects the unconditional row
// of the embedding table (used for classifier-free guidance).
constexpr int kNullCondition = -1;

enum class Activation { SiLU, Tanh };

inline std::string activation_name(Activation a) {
    return a == Activation::SiLU ? "silu" : "tanh";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "silu") return Activation::SiLU;
    if (s == "tanh") return Activation::Tanh;
    throw Error(ErrorKind::BadConfig, "unknown activation: " + s);
}

struct ModelConfig {
    int data_dim = 2;
    std::vector<int> hidden_dims = {64, 64};
    int embed_dim = 8;
    int time_features = 8;
    Activation activation = Activation::SiLU;
    int num_conditions = 4;

    int input_dim() const { return data_dim + 2 * time_features + embed_dim; }

    void validate() const {
        if (data_dim < 1 || embed_dim < 1 || time_features < 1 || num_conditions < 1)
            throw Error(ErrorKind::BadConfig, "ModelConfig: all dims must be >= 1");
        for (int h : hidden_dims)
            if (h < 1) throw Error(ErrorKind::BadConfig, "ModelConfig: hidden dim must be >= 1");
    }
};

// ============================================================================
//  Parameter layout
//
//  All trainables live in one flat buffer. Declaration order (also the
//  checkpoint order): embedding table, then per layer weight, bias. The
//  embedding table has num_conditions + 1 rows; the last row is the null
//  condition.
// ============================================================================

struct TensorInfo {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
    size_t count() const { return static_cast<size_t>(rows) * cols; }
};

struct ParameterLayout {
    std::vector<TensorInfo> tensors;
    size_t total = 0;
};

inline std::vector<int> layer_dims(const ModelConfig& cfg) {
    std::vector<int> dims;
    dims.push_back(cfg.input_dim());
    for (int h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(cfg.data_dim);
    return dims;
}

inline ParameterLayout make_layout(const ModelConfig& cfg) {
    cfg.validate();
    ParameterLayout layout;
    size_t off = 0;
    auto add = [&](const std::string& name, int r, int c) {
        layout.tensors.push_back({name, r, c, off});
        off += static_cast<size_t>(r) * c;
    };
    add("embed", cfg.num_conditions + 1, cfg.embed_dim);
    const std::vector<int> dims = layer_dims(cfg);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        add("w" + std::to_string(l), dims[l + 1], dims[l]);
        add("b" + std::to_string(l), dims[l + 1], 1);
    }
    layout.total = off;
    return layout;
}

struct ModelParameters {
    ModelConfig config;
    std::vector<double> values;

    ParameterLayout layout() const { return make_layout(config); }

    double* tensor(const ParameterLayout& lay, size_t idx) { return values.data() + lay.tensors[idx].offset; }
    const double* tensor(const ParameterLayout& lay, size_t idx) const {
        return values.data() + lay.tensors[idx].offset;
    }
};

// Weights ~ N(0, 1/fan_in), biases 0, embeddings ~ N(0, 1). Fill order is the
// layout order, elementwise, one gaussian per weight/embedding entry, so a
// seed pins the initialization bit-exactly.
inline ModelParameters init_parameters(const ModelConfig& cfg, Rng& rng) {
    ModelParameters p;
    p.config = cfg;
    const ParameterLayout lay = make_layout(cfg);
    p.values.assign(lay.total, 0.0);
    for (const TensorInfo& t : lay.tensors) {
        double* dst = p.values.data() + t.offset;
        if (t.name == "embed") {
            for (size_t i = 0; i < t.count(); ++i) dst[i] = rng.gaussian();
        } else if (t.name[0] == 'w') {
            const double scale = 1.0 / std::sqrt(static_cast<double>(t.cols));
            for (size_t i = 0; i < t.count(); ++i) dst[i] = scale * rng.gaussian();
        }
        // biases stay zero
    }
    return p;
}

inline ModelParameters clone_frozen(const ModelParameters& p) { return p; }

// ============================================================================
//  Forward / backward
// ============================================================================

inline double activate(Activation a, double x) {
    if (a == Activation::SiLU) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return x * s;
    }
    return std::tanh(x);
}

inline double activate_grad(Activation a, double x) {
    if (a == Activation::SiLU) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
    }
    const double th = std::tanh(x);
    return 1.0 - th * th;
}

// Per-sample forward pass record kept for reverse mode: the assembled input
// and every layer's pre-activation and activation.
struct ForwardTape {
    int cond_row = 0;
    std::vector<Vec> act;  // act[0] = input, act[l+1] = hidden/output of layer l
    std::vector<Vec> pre;  // pre[l] = W_l act[l] + b_l
    const Vec& output() const { return act.back(); }
};

inline int condition_row(const ModelConfig& cfg, int c) {
    if (c == kNullCondition) return cfg.num_conditions;
    if (c < 0 || c >= cfg.num_conditions)
        throw Error(ErrorKind::BadCondition, "condition index " + std::to_string(c) +
                                                 " out of range [0," +
                                                 std::to_string(cfg.num_conditions) + ")");
    return c;
}

// Time features, interleaved per octave: sin(pi t), cos(pi t), sin(2 pi t),
// cos(2 pi t), ... for j = 0 .. time_features-1 with frequency 2^j pi.
inline void fill_time_features(const ModelConfig& cfg, double t, double* dst) {
    double freq = M_PI;
    for (int j = 0; j < cfg.time_features; ++j) {
        dst[2 * j] = std::sin(freq * t);
        dst[2 * j + 1] = std::cos(freq * t);
        freq *= 2.0;
    }
}

inline ForwardTape forward_tape(const ModelParameters& params, const Vec& x, double t, int c) {
    const ModelConfig& cfg = params.config;
    if (static_cast<int>(x.size()) != cfg.data_dim)
        throw Error(ErrorKind::ShapeMismatch, "forward: x dimension mismatch");
    const ParameterLayout lay = params.layout();

    ForwardTape tape;
    tape.cond_row = condition_row(cfg, c);

    Vec input(static_cast<size_t>(cfg.input_dim()));
    std::copy(x.begin(), x.end(), input.begin());
    fill_time_features(cfg, t, input.data() + cfg.data_dim);
    const double* emb = params.values.data() + lay.tensors[0].offset +
                        static_cast<size_t>(tape.cond_row) * cfg.embed_dim;
    std::copy(emb, emb + cfg.embed_dim, input.begin() + cfg.data_dim + 2 * cfg.time_features);

    const std::vector<int> dims = layer_dims(cfg);
    const int num_layers = static_cast<int>(dims.size()) - 1;
    tape.act.reserve(static_cast<size_t>(num_layers) + 1);
    tape.pre.reserve(static_cast<size_t>(num_layers));
    tape.act.push_back(std::move(input));

    for (int l = 0; l < num_layers; ++l) {
        const TensorInfo& wi = lay.tensors[1 + 2 * static_cast<size_t>(l)];
        const TensorInfo& bi = lay.tensors[2 + 2 * static_cast<size_t>(l)];
        const double* w = params.values.data() + wi.offset;
        const double* b = params.values.data() + bi.offset;
        const Vec& h = tape.act.back();
        Vec a(static_cast<size_t>(wi.rows));
        for (int i = 0; i < wi.rows; ++i) {
            double s = b[i];
            const double* row = w + static_cast<size_t>(i) * wi.cols;
            for (int j = 0; j < wi.cols; ++j) s += row[j] * h[static_cast<size_t>(j)];
            a[static_cast<size_t>(i)] = s;
        }
        tape.pre.push_back(a);
        if (l + 1 < num_layers)
            for (double& v : a) v = activate(cfg.activation, v);
        tape.act.push_back(std::move(a));
    }
    return tape;
}

inline Vec forward(const ModelParameters& params, const Vec& x, double t, int c) {
    return forward_tape(params, x, t, c).output();
}

// Accumulates d(upstream . u)/d(theta) into grads (layout order, +=).
inline void backward_from_tape(const ModelParameters& params, const ForwardTape& tape,
                               const Vec& upstream, std::vector<double>& grads) {
    const ModelConfig& cfg = params.config;
    const ParameterLayout lay = params.layout();
    if (grads.size() != params.values.size())
        throw Error(ErrorKind::ShapeMismatch, "backward: gradient buffer size mismatch");
    if (upstream.size() != static_cast<size_t>(cfg.data_dim))
        throw Error(ErrorKind::ShapeMismatch, "backward: upstream dimension mismatch");

    const std::vector<int> dims = layer_dims(cfg);
    const int num_layers = static_cast<int>(dims.size()) - 1;

    Vec g = upstream;  // gradient w.r.t. current layer's output
    for (int l = num_layers - 1; l >= 0; --l) {
        const TensorInfo& wi = lay.tensors[1 + 2 * static_cast<size_t>(l)];
        const TensorInfo& bi = lay.tensors[2 + 2 * static_cast<size_t>(l)];
        const double* w = params.values.data() + wi.offset;
        double* gw = grads.data() + wi.offset;
        double* gb = grads.data() + bi.offset;

        if (l < num_layers - 1) {
            const Vec& pre = tape.pre[static_cast<size_t>(l)];
            for (int i = 0; i < wi.rows; ++i)
                g[static_cast<size_t>(i)] *=
                    activate_grad(cfg.activation, pre[static_cast<size_t>(i)]);
        }

        const Vec& h = tape.act[static_cast<size_t>(l)];
        for (int i = 0; i < wi.rows; ++i) {
            const double gi = g[static_cast<size_t>(i)];
            gb[i] += gi;
            double* grow = gw + static_cast<size_t>(i) * wi.cols;
            for (int j = 0; j < wi.cols; ++j) grow[j] += gi * h[static_cast<size_t>(j)];
        }

        if (l > 0) {
            Vec gh(static_cast<size_t>(wi.cols), 0.0);
            for (int i = 0; i < wi.rows; ++i) {
                const double gi = g[static_cast<size_t>(i)];
                const double* row = w + static_cast<size_t>(i) * wi.cols;
                for (int j = 0; j < wi.cols; ++j) gh[static_cast<size_t>(j)] += gi * row[j];
            }
            g = std::move(gh);
        } else {
            // Input layer: route the input-gradient slice into the embedding row.
            const int emb_off = cfg.data_dim + 2 * cfg.time_features;
            double* gemb = grads.data() + lay.tensors[0].offset +
                           static_cast<size_t>(tape.cond_row) * cfg.embed_dim;
            for (int k = 0; k < cfg.embed_dim; ++k) {
                double s = 0.0;
                for (int i = 0; i < wi.rows; ++i)
                    s += g[static_cast<size_t>(i)] * w[static_cast<size_t>(i) * wi.cols + emb_off + k];
                gemb[k] += s;
            }
        }
    }
}

inline std::vector<double> backward(const ModelParameters& params, const Vec& x, double t, int c,
                                    const Vec& upstream) {
    std::vector<double> grads(params.values.size(), 0.0);
    const ForwardTape tape = forward_tape(params, x, t, c);
    backward_from_tape(params, tape, upstream, grads);
    return grads;
}

// ============================================================================
//  AdamW with linear warmup
// ============================================================================

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    long long step = 0;
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int warmup_steps = 100;
};

inline OptimizerState make_optimizer(const ModelParameters& params, double lr, int warmup_steps,
                                     double weight_decay = 0.0) {
    OptimizerState st;
    st.m.assign(params.values.size(), 0.0);
    st.v.assign(params.values.size(), 0.0);
    st.lr = lr;
    st.warmup_steps = warmup_steps;
    st.weight_decay = weight_decay;
    return st;
}

// Effective rate for 1-based step k: lr * k / warmup while k < warmup, lr after.
inline double effective_lr(const OptimizerState& st, long long step) {
    if (st.warmup_steps > 0 && step < st.warmup_steps)
        return st.lr * static_cast<double>(step) / static_cast<double>(st.warmup_steps);
    return st.lr;
}

inline void adamw_step(OptimizerState& st, ModelParameters& params,
                       const std::vector<double>& grads) {
    const size_t n = params.values.size();
    if (grads.size() != n || st.m.size() != n || st.v.size() != n)
        throw Error(ErrorKind::ShapeMismatch, "adamw_step: shape mismatch");
    st.step += 1;
    const double lr = effective_lr(st, st.step);
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < n; ++i) {
        const double gi = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * gi;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * gi * gi;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params.values[i] -= lr * (mhat / (std::sqrt(vhat) + st.eps) +
                                  st.weight_decay * params.values[i]);
    }
}

// ============================================================================
//  Checkpoint format (.rfck)
//
//  magic "RFCK1\n", then one UTF-8 JSON header line listing the config, the
//  training step count, and every tensor's name and shape, terminated by a
//  blank line, then the flat parameter buffer as raw little-endian float64 in
//  declaration order, row-major.
// ============================================================================

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"data_dim", cfg.data_dim},
                          {"hidden_dims", cfg.hidden_dims},
                          {"embed_dim", cfg.embed_dim},
                          {"time_features", cfg.time_features},
                          {"activation", activation_name(cfg.activation)},
                          {"num_conditions", cfg.num_conditions}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.data_dim = j.at("data_dim").get<int>();
    cfg.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.time_features = j.at("time_features").get<int>();
    cfg.activation = activation_from_name(j.at("activation").get<std::string>());
    cfg.num_conditions = j.at("num_conditions").get<int>();
    cfg.validate();
    return cfg;
}

inline void save_checkpoint(const std::string& path, const ModelParameters& params,
                            long long step) {
    const ParameterLayout lay = params.layout();
    nlohmann::json tensors = nlohmann::json::array();
    for (const TensorInfo& t : lay.tensors)
        tensors.push_back(nlohmann::json::array({t.name, t.rows, t.cols}));
    nlohmann::json header{{"config", config_to_json(params.config)},
                          {"step", step},
                          {"tensors", tensors}};

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    out << "RFCK1\n" << header.dump() << "\n\n";
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(double)));
    if (!out) throw Error(ErrorKind::IoError, "short write to " + path);
}

struct Checkpoint {
    ModelParameters params;
    long long step = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
    std::string magic(6, '\0');
    in.read(magic.data(), 6);
    if (!in || magic != "RFCK1\n")
        throw Error(ErrorKind::ParseError, path + ": bad checkpoint magic");
    std::string header_line, blank;
    if (!std::getline(in, header_line) || !std::getline(in, blank) || !blank.empty())
        throw Error(ErrorKind::ParseError, path + ": malformed checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, path + ": header is not valid JSON: " + e.what());
    }

    Checkpoint ck;
    ck.params.config = config_from_json(header.at("config"));
    ck.step = header.at("step").get<long long>();

    const ParameterLayout lay = ck.params.layout();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != lay.tensors.size())
        throw Error(ErrorKind::ShapeMismatch, path + ": tensor count mismatch");
    for (size_t i = 0; i < lay.tensors.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at(0).get<std::string>() != lay.tensors[i].name ||
            t.at(1).get<int>() != lay.tensors[i].rows || t.at(2).get<int>() != lay.tensors[i].cols)
            throw Error(ErrorKind::ShapeMismatch,
                        path + ": tensor " + lay.tensors[i].name + " shape mismatch");
    }

    ck.params.values.resize(lay.total);
    in.read(reinterpret_cast<char*>(ck.params.values.data()),
            static_cast<std::streamsize>(lay.total * sizeof(double)));
    if (static_cast<size_t>(in.gcount()) != lay.total * sizeof(double))
        throw Error(ErrorKind::ParseError, path + ": truncated parameter payload");
    for (double v : ck.params.values)
        if (!std::isfinite(v)) throw Error(ErrorKind::ParseError, path + ": non-finite parameter");
    return ck;
}

}  // namespace flowalign
