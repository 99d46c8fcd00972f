#pragma once

#include <json.hpp>
#include <set>
#include <string>
#include <vector>

#include "qdbnn/data.hpp"
#include "qdbnn/train.hpp"

namespace qdbnn {

using nlohmann::json;

// Architecture string: comma-separated tokens, `dN` for a dense layer with N
// outputs, `cKsS-C` for a conv layer with C filters of size KxK and stride S.
struct ArchToken {
    bool dense = true;
    int n_out = 0;             // dense
    int kernel = 0, stride = 0, filters = 0;  // conv
};

inline std::vector<ArchToken> parse_arch(const std::string& arch) {
    std::vector<ArchToken> tokens;
    std::istringstream in(arch);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
        while (!tok.empty() && tok.back() == ' ') tok.pop_back();
        if (tok.empty()) continue;
        ArchToken t;
        if (tok[0] == 'd') {
            t.dense = true;
            t.n_out = std::stoi(tok.substr(1));
            QDBNN_REQUIRE(t.n_out > 0, "bad dense layer token '" << tok << "'");
        } else if (tok[0] == 'c') {
            t.dense = false;
            const auto s_pos = tok.find('s');
            const auto dash = tok.find('-');
            QDBNN_REQUIRE(s_pos != std::string::npos && dash != std::string::npos && s_pos < dash,
                          "bad conv layer token '" << tok << "' (want cKsS-C)");
            t.kernel = std::stoi(tok.substr(1, s_pos - 1));
            t.stride = std::stoi(tok.substr(s_pos + 1, dash - s_pos - 1));
            t.filters = std::stoi(tok.substr(dash + 1));
            QDBNN_REQUIRE(t.kernel > 0 && t.stride > 0 && t.filters > 0, "bad conv layer token '" << tok << "'");
        } else {
            throw ConfigError("unknown layer token '" + tok + "'");
        }
        tokens.push_back(t);
    }
    QDBNN_REQUIRE(!tokens.empty(), "empty architecture string");
    return tokens;
}

/// Builds the layer stack for a given input shape and per-layer variant list.
inline ModelSpec build_model_spec(const std::string& arch, const std::vector<std::string>& variants, int input_h,
                                  int input_w, int input_c, int n_classes, bool bias) {
    const auto tokens = parse_arch(arch);
    QDBNN_REQUIRE(variants.size() == tokens.size(),
                  "deformation list has " << variants.size() << " entries for " << tokens.size() << " layers");
    ModelSpec spec;
    spec.input_h = input_h;
    spec.input_w = input_w;
    spec.input_c = input_c;
    spec.n_classes = n_classes;
    TensorShape cur{input_h, input_w, input_c};
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto variant = parse_variant(variants[i]);
        QDBNN_REQUIRE(variant.has_value(), "unknown deformation variant '" << variants[i] << "'");
        if (tokens[i].dense) {
            spec.layers.push_back(LayerSpec::dense(cur.size(), tokens[i].n_out, *variant, bias));
            cur = TensorShape{1, 1, tokens[i].n_out};
        } else {
            LayerSpec l = LayerSpec::conv(tokens[i].kernel, tokens[i].stride, cur.c, tokens[i].filters, *variant, bias);
            const ConvShape cs = conv_shape(l, cur.h, cur.w);
            spec.layers.push_back(l);
            cur = TensorShape{cs.out_h, cs.out_w, cs.c_out};
        }
    }
    QDBNN_REQUIRE(cur.size() == n_classes,
                  "architecture yields " << cur.size() << " outputs, dataset has " << n_classes << " classes");
    return spec;
}

inline json layer_spec_to_json(const LayerSpec& l) {
    json j;
    j["kind"] = l.kind == LayerSpec::Kind::dense ? "dense" : "conv";
    j["variant"] = variant_name(l.variant);
    j["bias"] = l.bias;
    if (l.kind == LayerSpec::Kind::dense) {
        j["n_in"] = l.n_in;
        j["n_out"] = l.n_out;
    } else {
        j["kernel"] = l.kernel_h;
        j["stride"] = l.stride;
        j["c_in"] = l.c_in;
        j["c_out"] = l.c_out;
    }
    return j;
}

inline LayerSpec layer_spec_from_json(const json& j) {
    const auto variant = parse_variant(j.at("variant").get<std::string>());
    QDBNN_REQUIRE(variant.has_value(), "bad variant in layer spec");
    if (j.at("kind") == "dense") {
        return LayerSpec::dense(j.at("n_in").get<int>(), j.at("n_out").get<int>(), *variant, j.at("bias").get<bool>());
    }
    LayerSpec l = LayerSpec::conv(j.at("kernel").get<int>(), j.at("stride").get<int>(), j.at("c_in").get<int>(),
                                  j.at("c_out").get<int>(), *variant, j.at("bias").get<bool>());
    return l;
}

inline json model_spec_to_json(const ModelSpec& s) {
    json j;
    j["input_h"] = s.input_h;
    j["input_w"] = s.input_w;
    j["input_c"] = s.input_c;
    j["n_classes"] = s.n_classes;
    j["layers"] = json::array();
    for (const auto& l : s.layers) j["layers"].push_back(layer_spec_to_json(l));
    return j;
}

inline ModelSpec model_spec_from_json(const json& j) {
    ModelSpec s;
    s.input_h = j.at("input_h").get<int>();
    s.input_w = j.at("input_w").get<int>();
    s.input_c = j.at("input_c").get<int>();
    s.n_classes = j.at("n_classes").get<int>();
    for (const auto& lj : j.at("layers")) s.layers.push_back(layer_spec_from_json(lj));
    return s;
}

// Flat experiment configuration document.  Unknown keys are rejected so a
// typo cannot silently fall back to a default.
struct RunConfig {
    std::string dataset = "mnist";  // mnist | fashion_mnist | synthetic
    std::string data_mode;          // binarize | normalize (defaulted per dataset)
    std::string data_dir;           // dataset cache directory
    std::string arch = "d10";
    std::vector<std::string> deformation{"/"};
    int epochs = 50;
    int batch_size = 100;
    std::string learning_rate_schedule = "constant-0.01";
    double beta = 1e-6;
    double lambda_l2 = 0.0;
    std::uint64_t seed = 1;
    int threads = 0;
    bool bias = true;
    std::string output_dir = "runs/default";
    int synthetic_classes = 2;
    int synthetic_dim = 8;
    int synthetic_samples = 64;
    int synthetic_test_samples = 64;
    double synthetic_flip_prob = 0.0;
    std::vector<double> sweep_lambda_l2{0.0, 1e-4};
    std::vector<std::string> sweep_schedule{"constant-0.01", "piecewise-0.01-to-0.001"};

    static RunConfig from_json(const json& j) {
        static const std::set<std::string> known{
            "dataset", "data_mode", "data_dir", "arch", "deformation", "epochs", "batch_size",
            "learning_rate_schedule", "beta", "lambda_l2", "seed", "threads", "bias", "output_dir",
            "synthetic_classes", "synthetic_dim", "synthetic_samples", "synthetic_test_samples",
            "synthetic_flip_prob", "sweep_lambda_l2", "sweep_schedule"};
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
        }
        RunConfig c;
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("dataset", c.dataset);
        get("data_mode", c.data_mode);
        get("data_dir", c.data_dir);
        get("arch", c.arch);
        get("deformation", c.deformation);
        get("epochs", c.epochs);
        get("batch_size", c.batch_size);
        get("learning_rate_schedule", c.learning_rate_schedule);
        get("beta", c.beta);
        get("lambda_l2", c.lambda_l2);
        get("seed", c.seed);
        get("threads", c.threads);
        get("bias", c.bias);
        get("output_dir", c.output_dir);
        get("synthetic_classes", c.synthetic_classes);
        get("synthetic_dim", c.synthetic_dim);
        get("synthetic_samples", c.synthetic_samples);
        get("synthetic_test_samples", c.synthetic_test_samples);
        get("synthetic_flip_prob", c.synthetic_flip_prob);
        get("sweep_lambda_l2", c.sweep_lambda_l2);
        get("sweep_schedule", c.sweep_schedule);
        c.validate_and_default();
        return c;
    }

    void validate_and_default() {
        QDBNN_REQUIRE(dataset == "mnist" || dataset == "fashion_mnist" || dataset == "synthetic",
                      "unknown dataset '" << dataset << "'");
        if (data_mode.empty()) {
            data_mode = dataset == "fashion_mnist" ? "normalize" : "binarize";
        }
        QDBNN_REQUIRE(parse_preprocess_mode(data_mode).has_value(), "unknown data_mode '" << data_mode << "'");
        QDBNN_REQUIRE(LrSchedule::parse(learning_rate_schedule).has_value(),
                      "unknown learning_rate_schedule '" << learning_rate_schedule << "'");
        QDBNN_REQUIRE(beta >= 0.0 && lambda_l2 >= 0.0, "regularizer coefficients must be nonnegative");
        QDBNN_REQUIRE(epochs >= 0 && batch_size > 0, "bad epochs/batch_size");
        for (const auto& v : deformation) {
            QDBNN_REQUIRE(parse_variant(v).has_value(), "unknown deformation variant '" << v << "'");
        }
        for (const auto& s : sweep_schedule) {
            QDBNN_REQUIRE(LrSchedule::parse(s).has_value(), "unknown sweep schedule '" << s << "'");
        }
    }

    json to_json() const {
        json j;
        j["dataset"] = dataset;
        j["data_mode"] = data_mode;
        j["data_dir"] = data_dir;
        j["arch"] = arch;
        j["deformation"] = deformation;
        j["epochs"] = epochs;
        j["batch_size"] = batch_size;
        j["learning_rate_schedule"] = learning_rate_schedule;
        j["beta"] = beta;
        j["lambda_l2"] = lambda_l2;
        j["seed"] = seed;
        j["threads"] = threads;
        j["bias"] = bias;
        j["output_dir"] = output_dir;
        j["synthetic_classes"] = synthetic_classes;
        j["synthetic_dim"] = synthetic_dim;
        j["synthetic_samples"] = synthetic_samples;
        j["synthetic_test_samples"] = synthetic_test_samples;
        j["synthetic_flip_prob"] = synthetic_flip_prob;
        j["sweep_lambda_l2"] = sweep_lambda_l2;
        j["sweep_schedule"] = sweep_schedule;
        return j;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.beta = beta;
        t.lambda_l2 = lambda_l2;
        t.schedule = *LrSchedule::parse(learning_rate_schedule);
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.seed = seed;
        t.threads = threads;
        return t;
    }
};

struct LoadedData {
    ProbDataset train, test;
    int n_classes = 10;
};

/// Materializes the configured dataset (downloading and verifying if needed).
inline LoadedData load_dataset(const RunConfig& cfg, bool allow_network = true) {
    LoadedData out;
    if (cfg.dataset == "synthetic") {
        out.n_classes = cfg.synthetic_classes;
        out.train = synthetic_dataset(cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_samples, cfg.seed,
                                      cfg.synthetic_flip_prob, /*noise_salt=*/0);
        out.test = synthetic_dataset(cfg.synthetic_classes, cfg.synthetic_dim, cfg.synthetic_test_samples, cfg.seed,
                                     cfg.synthetic_flip_prob, /*noise_salt=*/1);
        return out;
    }
    const fs::path cache = cfg.data_dir.empty() ? default_cache_dir() : fs::path(cfg.data_dir);
    const DatasetFiles files = cfg.dataset == "mnist" ? mnist_files() : fashion_mnist_files();
    const DatasetPair pair = fetch_dataset(files, cache, allow_network);
    const PreprocessMode mode = *parse_preprocess_mode(cfg.data_mode);
    out.train = preprocess(pair.train, mode);
    out.test = preprocess(pair.test, mode);
    out.n_classes = 10;
    return out;
}

inline ModelSpec model_spec_from_config(const RunConfig& cfg, const LoadedData& data) {
    return build_model_spec(cfg.arch, cfg.deformation, data.train.h, data.train.w, data.train.c, data.n_classes,
                            cfg.bias);
}

}  // namespace qdbnn
