#include "evlg/quantizer.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "evlg/errors.hpp"

namespace evlg {

namespace {

std::size_t log2_exact(std::size_t value) {
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < value) ++bits;
    return bits;
}

}  // namespace

void QuantizerConfig::validate() const {
    if (reduction_factor == 0 || (reduction_factor & (reduction_factor - 1)) != 0) {
        throw ConfigError("reduction_factor must be a power of two, got " + std::to_string(reduction_factor));
    }
    if (image_side == 0 || image_side % reduction_factor != 0) {
        throw ConfigError("image_side " + std::to_string(image_side) + " is not divisible by reduction_factor " +
                          std::to_string(reduction_factor));
    }
    if (codebook_size == 0) throw ConfigError("codebook_size must be positive");
    if (code_dim == 0) throw ConfigError("code_dim must be positive");
    if (hidden_channels == 0) throw ConfigError("vq_hidden_channels must be positive");
    if (commitment_weight < 0.0) throw ConfigError("commitment_weight must be non-negative");
}

QuantizeResult quantize(const Tensor& encoded, const Tensor& codebook) {
    if (codebook.rank() != 2) throw DimensionError("quantize: codebook must be 2-D, got " + shape_to_string(codebook.shape()));
    const std::size_t d = codebook.dim(1), K = codebook.dim(0);
    if (encoded.shape().back() != d) {
        throw DimensionError("quantize: code dimension of " + shape_to_string(encoded.shape()) +
                             " does not match codebook " + shape_to_string(codebook.shape()));
    }
    const std::size_t cells = encoded.size() / d;
    auto e = encoded.data();
    auto c = codebook.data();
    QuantizeResult result;
    result.ids.resize(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_id = 0;
        for (std::size_t k = 0; k < K; ++k) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = e[i * d + j] - c[k * d + j];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_id = static_cast<int>(k);
            }
        }
        result.ids[i] = best_id;
    }
    result.z_emb = reshape(embed_lookup(codebook, result.ids), encoded.shape());
    return result;
}

VqLossTerms vq_loss(const Tensor& x, const Tensor& x_hat, const Tensor& e, const Tensor& z_emb, double beta) {
    Tensor recon = squared_error(x, x_hat);
    Tensor pull = squared_error(stop_gradient(z_emb), e);
    Tensor update = scale(squared_error(stop_gradient(e), z_emb), beta);
    VqLossTerms terms;
    terms.reconstruction = recon.item();
    terms.codebook_pull = pull.item();
    terms.code_update = update.item();
    terms.total = add(add(recon, pull), update);
    return terms;
}

Encoder::Encoder(const QuantizerConfig& config, Rng& rng) {
    std::size_t channels = QuantizerConfig::channels;
    for (std::size_t i = 0; i < log2_exact(config.reduction_factor); ++i) {
        down.emplace_back(channels, config.hidden_channels, ConvGeometry{4, 2, 1}, rng);
        channels = config.hidden_channels;
    }
    project = Conv2d(channels, config.code_dim, ConvGeometry{3, 1, 1}, rng);
}

Tensor Encoder::operator()(const Tensor& images) const {
    Tensor h = images;
    for (const auto& conv : down) h = gelu(conv(h));
    return project(h);
}

ParameterList Encoder::parameters() const {
    ParameterList out;
    for (std::size_t i = 0; i < down.size(); ++i) append_prefixed(out, "down" + std::to_string(i), down[i].parameters());
    append_prefixed(out, "project", project.parameters());
    return out;
}

Decoder::Decoder(const QuantizerConfig& config, Rng& rng)
    : input(config.code_dim, config.hidden_channels, ConvGeometry{3, 1, 1}, rng) {
    for (std::size_t i = 0; i < log2_exact(config.reduction_factor); ++i) {
        up.emplace_back(config.hidden_channels, config.hidden_channels, ConvGeometry{3, 1, 1}, rng);
    }
    output = Conv2d(config.hidden_channels, QuantizerConfig::channels, ConvGeometry{3, 1, 1}, rng);
}

Tensor Decoder::operator()(const Tensor& z_emb) const {
    Tensor h = gelu(input(z_emb));
    for (const auto& conv : up) h = gelu(conv(upsample_nearest(h, 2)));
    return sigmoid(output(h));
}

ParameterList Decoder::parameters() const {
    ParameterList out;
    append_prefixed(out, "input", input.parameters());
    for (std::size_t i = 0; i < up.size(); ++i) append_prefixed(out, "up" + std::to_string(i), up[i].parameters());
    append_prefixed(out, "output", output.parameters());
    return out;
}

Decoder Decoder::clone() const {
    Decoder out;
    out.input = input.clone();
    for (const auto& conv : up) out.up.push_back(conv.clone());
    out.output = output.clone();
    return out;
}

Quantizer::Quantizer(const QuantizerConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    encoder_ = Encoder(config_, rng);
    decoder_ = Decoder(config_, rng);
    const double bound = 1.0 / static_cast<double>(config_.codebook_size);
    codebook_ = init_uniform({config_.codebook_size, config_.code_dim}, bound, rng);
}

Tensor Quantizer::encode(const Tensor& images) const {
    const std::size_t side = config_.image_side;
    if (images.rank() != 4 || images.dim(1) != side || images.dim(2) != side ||
        images.dim(3) != QuantizerConfig::channels) {
        throw DimensionError("encode: expected [B x " + std::to_string(side) + " x " + std::to_string(side) +
                             " x 3], got " + shape_to_string(images.shape()));
    }
    for (double v : images.data()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ContractError("encode: pixel value " + std::to_string(v) + " outside [0, 1]");
    }
    return encoder_(images);
}

Tensor Quantizer::decode_with(const Decoder& decoder, const Tensor& z_emb) const {
    const std::size_t g = config_.grid_side();
    if (z_emb.rank() != 4 || z_emb.dim(1) != g || z_emb.dim(2) != g || z_emb.dim(3) != config_.code_dim) {
        throw DimensionError("decode: expected [B x " + std::to_string(g) + " x " + std::to_string(g) + " x " +
                             std::to_string(config_.code_dim) + "], got " + shape_to_string(z_emb.shape()));
    }
    return decoder(z_emb);
}

Tensor Quantizer::lookup(std::span<const int> ids, std::size_t batch) const {
    const std::size_t g = config_.grid_side();
    if (ids.size() != batch * g * g) {
        throw ContractError("lookup: " + std::to_string(ids.size()) + " ids for " + std::to_string(batch) +
                            " grids of " + std::to_string(g * g));
    }
    return reshape(embed_lookup(codebook_, ids), {batch, g, g, config_.code_dim});
}

VqForward Quantizer::forward(const Tensor& images) const {
    VqForward out;
    out.encoded = encode(images);
    out.quantized = quantize(out.encoded);
    out.reconstruction = decode(straight_through(out.encoded, out.quantized.z_emb));
    out.loss = vq_loss(images, out.reconstruction, out.encoded, out.quantized.z_emb, config_.commitment_weight);
    return out;
}

std::vector<VisualTokens> Quantizer::tokenize(const Tensor& images) const {
    NoGradGuard no_grad;
    auto ids = quantize(encode(images)).ids;
    const std::size_t n = config_.sequence_length();
    std::vector<VisualTokens> out;
    for (std::size_t b = 0; b < images.dim(0); ++b) out.emplace_back(ids.begin() + b * n, ids.begin() + (b + 1) * n);
    return out;
}

ParameterList Quantizer::network_parameters() const {
    ParameterList out;
    append_prefixed(out, "encoder", encoder_.parameters());
    append_prefixed(out, "decoder", decoder_.parameters());
    return out;
}

ParameterList Quantizer::parameters() const {
    ParameterList out = network_parameters();
    out.emplace_back("codebook", codebook_);
    return out;
}

double dead_code_fraction(const std::vector<VisualTokens>& sequences, std::size_t codebook_size) {
    std::set<int> used;
    for (const auto& seq : sequences) used.insert(seq.begin(), seq.end());
    return 1.0 - static_cast<double>(used.size()) / static_cast<double>(codebook_size);
}

VqTrainer::VqTrainer(Quantizer& quantizer, AdamConfig config)
    : quantizer_(quantizer), optimizer_(quantizer.parameters(), config) {}

VqStepStats VqTrainer::step(const Tensor& images) {
    VqForward fwd = quantizer_.forward(images);
    const double loss = fwd.loss.total.item();
    if (!std::isfinite(loss)) {
        throw TrainingError("vq loss is not finite (reconstruction " + std::to_string(fwd.loss.reconstruction) +
                            ", pull " + std::to_string(fwd.loss.codebook_pull) + ")");
    }
    fwd.loss.total.backward();
    optimizer_.step();
    VqStepStats stats;
    stats.loss = loss;
    stats.reconstruction = fwd.loss.reconstruction;
    stats.pixel_mse = fwd.loss.reconstruction / static_cast<double>(images.size());
    return stats;
}

}  // namespace evlg
