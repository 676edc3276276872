#include "evlg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "evlg/errors.hpp"

namespace evlg {

namespace {

struct Field {
    std::string key;
    std::string doc;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

template <class T>
T parse_unsigned(const std::string& s) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected an unsigned integer, got '" + s + "'");
    return v;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("expected true or false, got '" + s + "'");
}

Field size_field(std::string key, std::string doc, std::size_t& target) {
    return {std::move(key), std::move(doc), [&target](const std::string& s) { target = parse_unsigned<std::size_t>(s); },
            [&target] { return std::to_string(target); }};
}

Field u64_field(std::string key, std::string doc, std::uint64_t& target) {
    return {std::move(key), std::move(doc), [&target](const std::string& s) { target = parse_unsigned<std::uint64_t>(s); },
            [&target] { return std::to_string(target); }};
}

Field double_field(std::string key, std::string doc, double& target) {
    return {std::move(key), std::move(doc), [&target](const std::string& s) { target = parse_double(s); },
            [&target] { return format_double(target); }};
}

Field bool_field(std::string key, std::string doc, bool& target) {
    return {std::move(key), std::move(doc), [&target](const std::string& s) { target = parse_bool(s); },
            [&target] { return std::string(target ? "true" : "false"); }};
}

std::vector<Field> fields(RunConfig& c) {
    std::vector<Field> f = {
        u64_field("seed", "base seed; every random stream derives from it", c.seed),
        size_field("threads", "worker cap for candidate generation", c.threads),

        size_field("corpus.count", "pairs written by gen-corpus", c.corpus_count),
        size_field("corpus.image_side", "image side in pixels", c.corpus.image_side),
        size_field("corpus.max_objects", "objects per scene, 1 to 3", c.corpus.max_objects),
        size_field("corpus.max_text_length", "text budget m_max including EOS", c.corpus.max_text_length),

        size_field("vq.reduction_factor", "downsampling factor f (power of two)", c.quantizer.reduction_factor),
        size_field("vq.codebook_size", "codebook rows K", c.quantizer.codebook_size),
        size_field("vq.code_dim", "code dimension d", c.quantizer.code_dim),
        double_field("vq.commitment_weight", "beta on the codebook update term", c.quantizer.commitment_weight),
        size_field("vq.hidden_channels", "conv channels in encoder and decoder", c.quantizer.hidden_channels),
        size_field("vq.steps", "train-vq steps", c.vq_steps),
        size_field("vq.batch_size", "train-vq images per step", c.vq_batch_size),

        size_field("model.layers", "transformer layers", c.model.layers),
        size_field("model.d_model", "hidden width", c.model.d_model),
        size_field("model.heads", "attention heads", c.model.heads),
        size_field("model.text_vocab", "text vocabulary size V_t", c.model.text_vocab),
        size_field("model.kernel", "conv attention window side (odd)", c.model.kernel),
        bool_field("model.sparse", "row/column/conv image attention (false: dense seq2seq)", c.model.sparse_enabled),
        {"model.attention", "execution path: block-sparse or dense",
         [&c](const std::string& s) {
             if (s == "block-sparse")
                 c.model.attention = AttentionImpl::BlockSparse;
             else if (s == "dense")
                 c.model.attention = AttentionImpl::Dense;
             else
                 throw ConfigError("expected block-sparse or dense, got '" + s + "'");
         },
         [&c] { return std::string(c.model.attention == AttentionImpl::Dense ? "dense" : "block-sparse"); }},
        size_field("model.mlp_ratio", "MLP width multiple", c.model.mlp_ratio),

        size_field("train.steps", "train-model steps", c.train_steps),
        size_field("train.batch_size", "pairs per step", c.train.batch_size),
        double_field("train.learning_rate", "Adam learning rate", c.train.adam.learning_rate),
        double_field("train.beta1", "Adam beta1", c.train.adam.beta1),
        double_field("train.beta2", "Adam beta2", c.train.adam.beta2),
        double_field("train.epsilon", "Adam epsilon", c.train.adam.epsilon),
        bool_field("train.normalize_loss", "average token losses instead of summing", c.train.normalize_loss),
        size_field("train.log_every", "log line interval in steps", c.log_every),

        {"t2i.mode", "two-stage or end-to-end",
         [&c](const std::string& s) { c.t2i_mode = parse_mode(s); }, [&c] { return std::string(mode_name(c.t2i_mode)); }},
        double_field("t2i.rec_weight", "reconstruction loss weight in end-to-end training", c.rec_weight),

        size_field("compare.train_pairs", "compare-t2i training pairs", c.compare.train_pairs),
        size_field("compare.eval_pairs", "compare-t2i held-out pairs", c.compare.eval_pairs),
        size_field("compare.vq_steps", "compare-t2i quantizer steps", c.compare.vq_steps),
        size_field("compare.steps", "compare-t2i steps per generator", c.compare.steps),
        {"compare.seeds", "comma-separated generator seeds",
         [&c](const std::string& s) {
             c.compare.seeds.clear();
             std::istringstream in(s);
             for (std::string item; std::getline(in, item, ',');) c.compare.seeds.push_back(parse_unsigned<std::uint64_t>(item));
         },
         [&c] {
             std::string out;
             for (auto v : c.compare.seeds) out += (out.empty() ? "" : ",") + std::to_string(v);
             return out;
         }},
        bool_field("compare.normalize", "mean instead of summed losses", c.compare.normalize),

        {"sampler.strategy", "greedy, temperature or topk",
         [&c](const std::string& s) { c.sampler.strategy = parse_strategy(s); },
         [&c] { return std::string(strategy_name(c.sampler.strategy)); }},
        double_field("sampler.temperature", "softmax temperature", c.sampler.temperature),
        size_field("sampler.top_k", "top-k cutoff", c.sampler.top_k),
        size_field("sampler.candidates", "samples drawn before reranking", c.sampler.num_candidates),

        size_field("vqa.steps", "VQA fine-tuning steps", c.vqa_steps),
        bool_field("vqa.joint", "keep the text-to-image loss during VQA fine-tuning", c.vqa_joint),

        size_field("filter.max_words", "text length filter: pass below this word count", c.filter_max_words),
        double_field("filter.threshold", "similarity filter: pass strictly above", c.filter_threshold),
    };
    return f;
}

}  // namespace

void RunConfig::finalize() {
    corpus.validate();
    if (corpus_count == 0) throw ConfigError("corpus.count must be positive");
    quantizer.image_side = corpus.image_side;
    quantizer.validate();
    model.image_vocab = quantizer.codebook_size;
    model.grid_side = quantizer.grid_side();
    model.max_text_length = corpus.max_text_length;
    const Vocabulary vocab;
    if (model.text_vocab < vocab.size()) {
        throw ConfigError("model.text_vocab " + std::to_string(model.text_vocab) + " is smaller than the " +
                          std::to_string(vocab.size()) + "-word vocabulary");
    }
    model.validate();
    train.seed = seed;
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (vq_batch_size == 0) throw ConfigError("vq.batch_size must be positive");
    if (threads == 0) throw ConfigError("threads must be positive");
    sampler.seed = seed;
    sampler.validate(model.image_vocab);
    if (compare.seeds.empty()) throw ConfigError("compare.seeds must list at least one seed");
    compare.corpus = corpus;
    compare.corpus_seed = seed;
    compare.quantizer = quantizer;
    compare.vq_seed = seed;
    compare.vq_batch_size = vq_batch_size;
    compare.model = model;
    compare.adam = train.adam;
    compare.batch_size = train.batch_size;
    compare.rec_weight = rec_weight;
    if (!(filter_threshold >= 0.0 && filter_threshold <= 1.0)) throw ConfigError("filter.threshold must lie in [0, 1]");
}

std::vector<ConfigKey> config_keys() {
    RunConfig defaults;
    std::vector<ConfigKey> out;
    for (const auto& f : fields(defaults)) out.push_back({f.key, f.get(), f.doc});
    return out;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    RunConfig config;
    auto table = fields(config);
    std::istringstream in(text);
    std::string line;
    for (std::size_t number = 1; std::getline(in, line); ++number) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + " line " + std::to_string(number);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
        try {
            it->set(value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": key '" + key + "': " + e.what());
        }
    }
    config.finalize();
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path.string());
}

std::string to_config_text(const RunConfig& config) {
    RunConfig copy = config;
    std::string out;
    for (const auto& f : fields(copy)) out += f.key + " = " + f.get() + "\n";
    return out;
}

}  // namespace evlg
