#include "evlg/t2i.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "evlg/errors.hpp"

namespace evlg {

const char* mode_name(T2IMode mode) { return mode == T2IMode::TwoStage ? "two-stage" : "end-to-end"; }

T2IMode parse_mode(const std::string& name) {
    if (name == "two-stage") return T2IMode::TwoStage;
    if (name == "end-to-end") return T2IMode::EndToEnd;
    throw ConfigError("unknown t2i mode '" + name + "' (two-stage, end-to-end)");
}

HiddenToCodeMap::HiddenToCodeMap(std::size_t d_model, std::size_t code_dim, Rng& rng)
    : fc1(d_model, d_model, rng), fc2(d_model, code_dim, rng) {}

Tensor HiddenToCodeMap::operator()(const Tensor& hidden) const { return fc2(gelu(fc1(hidden))); }

ParameterList HiddenToCodeMap::parameters() const {
    ParameterList out;
    append_prefixed(out, "fc1", fc1.parameters());
    append_prefixed(out, "fc2", fc2.parameters());
    return out;
}

EndToEndReconstructor::EndToEndReconstructor(const Quantizer& quantizer, std::size_t d_model, std::uint64_t seed)
    : decoder(quantizer.decoder().clone()) {
    Rng rng(seed);
    map = HiddenToCodeMap(d_model, quantizer.config().code_dim, rng);
}

ParameterList EndToEndReconstructor::parameters() const {
    ParameterList out;
    append_prefixed(out, "map", map.parameters());
    append_prefixed(out, "decoder", decoder.parameters());
    return out;
}

std::vector<T2IExample> make_t2i_examples(const std::vector<Pair>& pairs, const Quantizer& quantizer) {
    std::vector<Image> images;
    for (const auto& p : pairs) images.push_back(p.image);
    const auto tokens = quantizer.tokenize(stack_images(images));
    std::vector<T2IExample> out;
    for (std::size_t i = 0; i < pairs.size(); ++i)
        out.push_back({pairs[i].tokens, tokens[i], stack_images(std::span<const Image>(&pairs[i].image, 1))});
    return out;
}

namespace {

Tensor image_slots(const Tensor& hidden, std::size_t text_length, std::size_t n) {
    return slice_rows(hidden, text_length, n);
}

Tensor code_grid(const Tensor& codes, std::size_t grid_side) {
    return reshape(codes, {1, grid_side, grid_side, codes.dim(1)});
}

}  // namespace

Tensor hidden_to_code(const Model& model, const HiddenToCodeMap& map, std::span<const int> text,
                      std::span<const int> z, std::size_t grid_side) {
    JointSequence seq{Direction::TextToImage, {text.begin(), text.end()}, {z.begin(), z.end()}};
    const Tensor hidden = model.forward(seq).hidden;
    return code_grid(map(image_slots(hidden, text.size(), z.size())), grid_side);
}

Tensor two_stage_generate(const Model& model, const Quantizer& quantizer, std::span<const int> text,
                          const SamplerConfig& sampler, std::uint64_t seed) {
    NoGradGuard no_grad;
    const auto z = sample_image_tokens(model, text, sampler, seed);
    return quantizer.decode(quantizer.lookup(z, 1));
}

Tensor end_to_end_reconstruct(const Model& model, const EndToEndReconstructor& reconstructor,
                              const Quantizer& quantizer, std::span<const int> text, std::span<const int> z) {
    NoGradGuard no_grad;
    const Tensor codes = hidden_to_code(model, reconstructor.map, text, z, quantizer.config().grid_side());
    return quantizer.decode_with(reconstructor.decoder, codes);
}

EndToEndLoss end_to_end_forward(const Model& model, const EndToEndReconstructor& reconstructor,
                                const Quantizer& quantizer, const T2IExample& example, T2IMode mode,
                                double rec_weight, bool normalize) {
    JointSequence seq{Direction::TextToImage, example.text, example.image_tokens};
    const ForwardResult f = model.forward(seq);
    Tensor gen = loss_txt2img(f.logits, example.image_tokens, normalize);
    Tensor slots = image_slots(f.hidden, example.text.size(), example.image_tokens.size());
    if (mode == T2IMode::TwoStage) slots = slots.detach();
    const Tensor codes = code_grid(reconstructor.map(slots), quantizer.config().grid_side());
    Tensor rec = squared_error(example.image, quantizer.decode_with(reconstructor.decoder, codes));
    if (normalize) rec = scale(rec, 1.0 / static_cast<double>(example.image.size()));
    EndToEndLoss out;
    out.gen = gen.item();
    out.rec = rec.item();
    out.combined = add(gen, scale(rec, rec_weight));
    out.gen_loss = gen;
    out.rec_loss = rec;
    return out;
}

Tensor reconstruct_from_gold(T2IMode mode, std::span<const int> z_gold, const Quantizer& quantizer, const Model* model,
                             const EndToEndReconstructor* reconstructor, std::span<const int> text) {
    if (mode == T2IMode::TwoStage) {
        NoGradGuard no_grad;
        return quantizer.decode(quantizer.lookup(z_gold, 1));
    }
    if (!model || !reconstructor) throw ContractError("end-to-end reconstruction needs the generator and reconstructor");
    return end_to_end_reconstruct(*model, *reconstructor, quantizer, text, z_gold);
}

namespace {

ParameterList trainable(const Model& model, const EndToEndReconstructor& reconstructor, T2IMode mode) {
    ParameterList params = model.parameters();
    if (mode == T2IMode::EndToEnd) append_prefixed(params, "reconstructor", reconstructor.parameters());
    return params;
}

}  // namespace

T2ITrainer::T2ITrainer(Model& model, EndToEndReconstructor& reconstructor, const Quantizer& quantizer,
                       std::vector<T2IExample> examples, T2ITrainerConfig config)
    : model_(model),
      reconstructor_(reconstructor),
      quantizer_(quantizer),
      examples_(std::move(examples)),
      config_(config),
      optimizer_(trainable(model, reconstructor, config.mode), config.adam) {
    if (examples_.empty()) throw ContractError("t2i trainer needs examples");
    if (config_.batch_size == 0) throw ConfigError("batch_size must be positive");
}

T2IStepStats T2ITrainer::train_step() {
    std::vector<std::size_t> idx(examples_.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (config_.batch_size < idx.size()) {
        Rng rng(derive_seed(config_.seed, step_));
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(config_.batch_size);
    }
    T2IStepStats stats{step_, 0.0, 0.0, 0.0};
    Tensor total;
    for (std::size_t i : idx) {
        const auto& ex = examples_[i];
        Tensor loss;
        if (config_.mode == T2IMode::TwoStage) {
            loss = loss_txt2img(model_.forward({Direction::TextToImage, ex.text, ex.image_tokens}).logits, ex.image_tokens,
                                config_.normalize);
            stats.gen += loss.item();
        } else {
            EndToEndLoss l = end_to_end_forward(model_, reconstructor_, quantizer_, ex, config_.mode, config_.rec_weight,
                                                config_.normalize);
            stats.gen += l.gen;
            stats.rec += l.rec;
            loss = l.combined;
        }
        total = total.defined() ? add(total, loss) : loss;
    }
    stats.loss = total.item();
    if (!std::isfinite(stats.loss)) throw TrainingError("non-finite t2i loss at step " + std::to_string(step_));
    total.backward();
    optimizer_.step();
    ++step_;
    return stats;
}

const std::vector<std::string>& compare_row_names() {
    static const std::vector<std::string> names = {
        "two-stage G & two-stage R",     "end-to-end G & two-stage R",    "end-to-end G & end-to-end R",
        "gold sequence & two-stage R",   "gold sequence & end-to-end R",
    };
    return names;
}

std::size_t CompareReport::generation_wins() const {
    std::size_t wins = 0;
    for (const auto& s : seeds) wins += s.rows[2].mse <= s.rows[0].mse;
    return wins;
}

std::size_t CompareReport::gold_wins() const {
    std::size_t wins = 0;
    for (const auto& s : seeds) wins += s.rows[4].mse <= s.rows[3].mse;
    return wins;
}

namespace {

double pixel_mse(const Tensor& a, const Tensor& b) {
    NoGradGuard no_grad;
    return squared_error(a, b).item() / static_cast<double>(a.size());
}

double token_nll(const Model& model, const T2IExample& ex) {
    NoGradGuard no_grad;
    const auto logits = model.forward({Direction::TextToImage, ex.text, ex.image_tokens}).logits;
    return loss_txt2img(logits, ex.image_tokens, true).item();
}

}  // namespace

CompareReport compare_modes(const CompareConfig& config, const Quantizer* pretrained, std::ostream* log) {
    if (config.train_pairs == 0 || config.eval_pairs == 0) throw ConfigError("compare needs train and eval pairs");
    const auto pairs = generate_corpus(config.train_pairs + config.eval_pairs, config.corpus_seed, config.corpus);
    const std::vector<Pair> train(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(config.train_pairs));
    const std::vector<Pair> eval(pairs.begin() + static_cast<std::ptrdiff_t>(config.train_pairs), pairs.end());

    Quantizer quantizer;
    if (pretrained) {
        quantizer = *pretrained;
    } else {
        quantizer = Quantizer(config.quantizer, config.vq_seed);
        VqTrainer vq(quantizer, config.adam);
        std::vector<std::size_t> idx(train.size());
        for (std::size_t s = 0; s < config.vq_steps; ++s) {
            std::iota(idx.begin(), idx.end(), 0);
            Rng rng(derive_seed(config.vq_seed, s));
            rng.shuffle(idx.begin(), idx.end());
            std::vector<Image> images;
            for (std::size_t i = 0; i < std::min(config.vq_batch_size, idx.size()); ++i) images.push_back(train[idx[i]].image);
            const auto st = vq.step(stack_images(images));
            if (log && (s + 1) % 50 == 0) *log << "vq step " << s + 1 << " pixel_mse " << st.pixel_mse << '\n';
        }
    }
    const auto train_ex = make_t2i_examples(train, quantizer);
    const auto eval_ex = make_t2i_examples(eval, quantizer);

    ModelConfig mc = config.model;
    mc.image_vocab = quantizer.config().codebook_size;
    mc.grid_side = quantizer.config().grid_side();

    const SamplerConfig greedy = greedy_sampler();

    CompareReport report;
    for (std::uint64_t seed : config.seeds) {
        std::vector<Model> models;
        std::vector<EndToEndReconstructor> recons;
        for (T2IMode mode : {T2IMode::TwoStage, T2IMode::EndToEnd}) {
            models.emplace_back(mc, seed);
            recons.emplace_back(quantizer, mc.d_model, derive_seed(seed, 1));
            T2ITrainer trainer(models.back(), recons.back(), quantizer, train_ex,
                               {mode, config.rec_weight, config.adam, config.batch_size, seed, config.normalize});
            T2IStepStats st;
            for (std::size_t s = 0; s < config.steps; ++s) st = trainer.train_step();
            if (log) {
                *log << "seed " << seed << ' ' << mode_name(mode) << " final gen " << st.gen << " rec " << st.rec
                     << '\n';
            }
        }
        const Model& g_ts = models[0];
        const Model& g_e2e = models[1];
        const EndToEndReconstructor& r_e2e = recons[1];

        std::vector<double> mse(5, 0.0), nll(5, 0.0);
        for (const auto& ex : eval_ex) {
            NoGradGuard no_grad;
            const auto z_ts = sample_image_tokens(g_ts, ex.text, greedy, 0);
            const auto z_e2e = sample_image_tokens(g_e2e, ex.text, greedy, 0);
            mse[0] += pixel_mse(ex.image, quantizer.decode(quantizer.lookup(z_ts, 1)));
            mse[1] += pixel_mse(ex.image, quantizer.decode(quantizer.lookup(z_e2e, 1)));
            mse[2] += pixel_mse(ex.image, end_to_end_reconstruct(g_e2e, r_e2e, quantizer, ex.text, z_e2e));
            mse[3] += pixel_mse(ex.image, reconstruct_from_gold(T2IMode::TwoStage, ex.image_tokens, quantizer));
            mse[4] += pixel_mse(ex.image, reconstruct_from_gold(T2IMode::EndToEnd, ex.image_tokens, quantizer, &g_e2e,
                                                                &r_e2e, ex.text));
            const double nll_ts = token_nll(g_ts, ex), nll_e2e = token_nll(g_e2e, ex);
            nll[0] += nll_ts;
            nll[1] += nll_e2e;
            nll[2] += nll_e2e;
            nll[3] += nll_ts;
            nll[4] += nll_e2e;
        }
        SeedReport sr{seed, {}};
        const double count = static_cast<double>(eval_ex.size());
        for (std::size_t r = 0; r < 5; ++r) sr.rows.push_back({compare_row_names()[r], mse[r] / count, nll[r] / count});
        report.seeds.push_back(std::move(sr));
    }
    return report;
}

void write_compare_table(std::ostream& out, const CompareReport& report) {
    std::size_t width = 0;
    for (const auto& n : compare_row_names()) width = std::max(width, n.size());
    for (const auto& s : report.seeds) {
        out << "seed " << s.seed << '\n';
        out << "  " << std::left << std::setw(static_cast<int>(width)) << "row" << "  " << std::right << std::setw(12)
            << "pixel_mse" << "  " << std::setw(12) << "token_nll" << '\n';
        for (const auto& r : s.rows) {
            out << "  " << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right << std::fixed
                << std::setprecision(6) << std::setw(12) << r.mse << "  " << std::setw(12) << r.nll << '\n';
            out.unsetf(std::ios::fixed);
        }
    }
    out << "end-to-end G&R <= two-stage G&R in " << report.generation_wins() << " of " << report.seeds.size()
        << " seeds\n";
    out << "end-to-end R <= two-stage R on gold sequences in " << report.gold_wins() << " of " << report.seeds.size()
        << " seeds\n";
}

void write_compare_tsv(std::ostream& out, const CompareReport& report) {
    out << "seed\trow\tpixel_mse\ttoken_nll\n" << std::setprecision(17);
    for (const auto& s : report.seeds)
        for (const auto& r : s.rows) out << s.seed << '\t' << r.name << '\t' << r.mse << '\t' << r.nll << '\n';
}

}  // namespace evlg
