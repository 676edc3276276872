// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance            all criteria
//   acceptance 1 2 5      a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evlg/attention.hpp"
#include "evlg/i2t.hpp"
#include "evlg/pipeline.hpp"
#include "gradcheck.hpp"
#include "mask_oracle.hpp"

using namespace evlg;
using testing::check_gradients;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects sub-checks; the criterion passes only if all of them do.
struct Checks {
    Outcome out;
    void require(bool ok, const std::string& what) {
        if (!ok) out.pass = false;
        if (!out.detail.empty()) out.detail += "; ";
        out.detail += what + (ok ? "" : " [FAILED]");
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
    return worst;
}

std::vector<std::vector<double>> values_of(const ParameterList& params) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, t] : params) out.emplace_back(t.data().begin(), t.data().end());
    return out;
}

std::vector<std::vector<double>> grads_of(const ParameterList& params) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, t] : params)
        out.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.size(), 0.0));
    return out;
}

std::vector<int> random_ids(std::size_t count, std::size_t vocab, Rng& rng, int lowest = 0) {
    std::vector<int> out(count);
    for (auto& v : out) v = lowest + static_cast<int>(rng.index(vocab - static_cast<std::size_t>(lowest)));
    return out;
}

ModelConfig micro_model() {
    ModelConfig c;
    c.layers = 2;
    c.d_model = 8;
    c.heads = 2;
    c.text_vocab = 8;
    c.image_vocab = 8;
    c.max_text_length = 3;
    c.grid_side = 2;
    return c;
}

QuantizerConfig tiny_quantizer() {
    QuantizerConfig c;
    c.image_side = 8;
    c.reduction_factor = 2;
    c.codebook_size = 8;
    c.code_dim = 3;
    c.hidden_channels = 4;
    return c;
}

// 1 ----------------------------------------------------------------------

Outcome gradient_integrity() {
    Rng rng(7);
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0, cases = 0;
    auto run = [&](const std::string& name, std::function<Tensor()> fn, const ParameterList& params) {
        const auto r = check_gradients(fn, params);
        checked += r.checked;
        ++cases;
        if (r.max_relative_error >= worst) {
            worst = r.max_relative_error;
            worst_name = name + ":" + r.worst;
        }
    };

    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto w = random_tensor({3, 4}, rng, false);
    auto weighted = [&](const Tensor& t) { return sum(mul(t, reshape(w, t.shape()))); };
    run("matmul", [&] { return sum(matmul(a, transpose(b))); }, {{"a", a}, {"b", b}});
    run("add", [&] { return weighted(add(a, b)); }, {{"a", a}, {"b", b}});
    run("sub", [&] { return weighted(sub(a, b)); }, {{"a", a}, {"b", b}});
    run("mul", [&] { return weighted(mul(a, b)); }, {{"a", a}, {"b", b}});
    run("scale", [&] { return weighted(scale(a, -1.7)); }, {{"a", a}});
    run("square", [&] { return weighted(square(a)); }, {{"a", a}});
    run("gelu", [&] { return weighted(gelu(a)); }, {{"a", a}});
    run("tanh", [&] { return weighted(evlg::tanh(a)); }, {{"a", a}});
    run("sigmoid", [&] { return weighted(sigmoid(a)); }, {{"a", a}});
    run("transpose", [&] { return sum(mul(transpose(a), transpose(w))); }, {{"a", a}});
    run("squared_error", [&] { return squared_error(a, b); }, {{"a", a}, {"b", b}});
    auto bias = random_tensor({4}, rng), gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
    run("add_bias", [&] { return weighted(add_bias(a, bias)); }, {{"a", a}, {"bias", bias}});
    run("layer_norm", [&] { return weighted(layer_norm(a, gamma, beta)); }, {{"a", a}, {"gamma", gamma}, {"beta", beta}});
    run("reshape", [&] { return sum(mul(reshape(a, {2, 6}), reshape(w, {2, 6}))); }, {{"a", a}});
    std::vector<Tensor> parts{a, b};
    auto w6 = random_tensor({6, 4}, rng, false), w38 = random_tensor({3, 8}, rng, false);
    auto w24 = random_tensor({2, 4}, rng, false), w32 = random_tensor({3, 2}, rng, false);
    run("concat", [&] { return sum(mul(concat(parts), w6)); }, {{"a", a}, {"b", b}});
    run("concat_cols", [&] { return sum(mul(concat_cols(parts), w38)); }, {{"a", a}, {"b", b}});
    run("slice_rows", [&] { return sum(mul(slice_rows(a, 1, 2), w24)); }, {{"a", a}});
    run("slice_cols", [&] { return sum(mul(slice_cols(a, 1, 2), w32)); }, {{"a", a}});
    std::vector<int> ids{2, 0, 2};
    run("embed_lookup", [&] { return weighted(embed_lookup(a, ids)); }, {{"a", a}});
    std::vector<std::uint8_t> allow{1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 1};
    run("masked_softmax", [&] { return weighted(masked_softmax(a, allow)); }, {{"a", a}});
    std::vector<int> targets{3, 0, 1};
    run("softmax_cross_entropy", [&] { return softmax_cross_entropy(a, targets); }, {{"a", a}});

    auto img = random_tensor({2, 5, 4, 3}, rng);
    auto wcol = random_tensor({2 * 3 * 2, 3 * 3 * 3}, rng, false);
    run("im2col", [&] { return sum(mul(im2col(img, {3, 2, 1}), wcol)); }, {{"img", img}});
    auto wup = random_tensor({2, 10, 8, 3}, rng, false);
    run("upsample_nearest", [&] { return sum(mul(upsample_nearest(img, 2), wup)); }, {{"img", img}});
    Conv2d conv(3, 2, ConvGeometry{3, 2, 1}, rng);
    auto wconv = random_tensor({2, 3, 2, 2}, rng, false);
    ParameterList conv_params = conv.parameters();
    conv_params.push_back({"img", img});
    run("conv2d", [&] { return sum(mul(conv(img), wconv)); }, conv_params);
    Linear lin(4, 5, rng);
    auto wlin = random_tensor({3, 5}, rng, false);
    ParameterList lin_params = lin.parameters();
    lin_params.push_back({"a", a});
    for (auto& v : Tensor(lin.bias).mutable_data()) v = rng.uniform(-0.5, 0.5);
    run("linear", [&] { return sum(mul(lin(a), wlin)); }, lin_params);

    for (auto dir : {Direction::TextToImage, Direction::ImageToText}) {
        MaskGeometry g{dir, SparseKind::Conv, 2, 3, 3, 3};
        const std::size_t L = g.length();
        auto q = random_tensor({L, 4}, rng), k = random_tensor({L, 4}, rng), v = random_tensor({L, 4}, rng);
        auto wa = random_tensor({L, 4}, rng, false);
        const auto schedule = block_schedule(g);
        const auto mask = build_mask(g);
        run("block_sparse_attention", [&] { return sum(mul(block_sparse_attention(q, k, v, 2, schedule), wa)); },
            {{"q", q}, {"k", k}, {"v", v}});
        run("dense_attention", [&] { return sum(mul(dense_attention(q, k, v, 2, mask.allow), wa)); },
            {{"q", q}, {"k", k}, {"v", v}});
    }

    // VQ decoder path: the loss is smooth in the decoder parameters at fixed codes.
    Quantizer quantizer(tiny_quantizer(), 21);
    auto images = random_tensor({1, 8, 8, 3}, rng, false, 0.0, 1.0);
    run("vq_decoder", [&] { return quantizer.forward(images).loss.total; }, quantizer.decoder().parameters());

    for (auto impl : {AttentionImpl::BlockSparse, AttentionImpl::Dense}) {
        ModelConfig c = micro_model();
        c.attention = impl;
        Model model(c, 13);
        Rng data(13);
        std::vector<TokenPair> batch = {{random_ids(3, 8, data, 4), random_ids(4, 8, data)}};
        run(impl == AttentionImpl::Dense ? "micro_model_dense" : "micro_model_block_sparse",
            [&] { return multitask_loss(model, batch).total; }, model.parameters());
    }

    Checks c;
    c.require(worst < 1e-4, std::to_string(cases) + " cases, " + std::to_string(checked) +
                                " entries, worst relative error " + fmt(worst) + " at " + worst_name);
    return c.out;
}

// 2 ----------------------------------------------------------------------

Outcome sparse_dense_equivalence() {
    Rng rng(4);
    double worst_attention = 0.0, worst_logits = 0.0;
    for (auto dir : {Direction::TextToImage, Direction::ImageToText})
        for (auto kind : {SparseKind::Row, SparseKind::Column, SparseKind::Conv}) {
            MaskGeometry g{dir, kind, 6, 4, 4, 3};
            const std::size_t L = g.length();
            auto q = random_tensor({L, 16}, rng), k = random_tensor({L, 16}, rng), v = random_tensor({L, 16}, rng);
            worst_attention = std::max(worst_attention, max_abs_diff(dense_attention(q, k, v, 4, build_mask(g).allow),
                                                                     block_sparse_attention(q, k, v, 4, block_schedule(g))));
        }

    // Full models: layers 1..4 are Row, Column, Row, Conv.
    ModelConfig c;
    ModelConfig dense_exec = c;
    dense_exec.attention = AttentionImpl::Dense;
    Model fused(c, 7), dense(dense_exec, 7);
    for (int trial = 0; trial < 3; ++trial) {
        const auto text = random_ids(6, c.text_vocab, rng, 4);
        const auto image = random_ids(16, c.image_vocab, rng);
        for (auto dir : {Direction::TextToImage, Direction::ImageToText})
            worst_logits = std::max(worst_logits, max_abs_diff(fused.forward({dir, text, image}).logits,
                                                               dense.forward({dir, text, image}).logits));
    }
    Checks checks;
    checks.require(worst_attention < 1e-9, "attention output, 2 directions x {Row, Column, Conv}: max abs diff " + fmt(worst_attention));
    checks.require(worst_logits < 1e-9, "model logits, both directions, m=6 h=w=4: max abs diff " + fmt(worst_logits));
    return checks.out;
}

// 3 ----------------------------------------------------------------------

Outcome mask_fixtures() {
    Checks checks;
    std::size_t compared = 0, mismatched = 0;
    for (auto dir : {Direction::TextToImage, Direction::ImageToText})
        for (auto kind : {SparseKind::Row, SparseKind::Column, SparseKind::Conv, SparseKind::Dense})
            for (int m = 0; m <= 6; ++m)
                for (int side = 1; side <= 4; ++side) {
                    ++compared;
                    const auto mask = sparse_image_mask(dir, kind, m, side, side);
                    if (mask.allow != testing::oracle_mask(dir, kind, m, side, side, 3)) ++mismatched;
                    if (kind == SparseKind::Dense &&
                        seq2seq_mask(dir, m, side * side).allow != testing::oracle_mask(dir, kind, m, side, side, 3))
                        ++mismatched;
                    MaskGeometry g{dir, kind, static_cast<std::size_t>(m), static_cast<std::size_t>(side),
                                   static_cast<std::size_t>(side), 3};
                    if (schedule_to_mask(g, block_schedule(g)).allow != mask.allow) ++mismatched;
                }
    const bool fixtures = to_pbm(sparse_image_mask(Direction::TextToImage, SparseKind::Row, 1, 2, 2)) ==
                              "P1\n5 5\n1 0 0 0 0\n1 1 0 0 0\n1 1 1 0 0\n1 0 0 1 0\n1 0 0 1 1\n" &&
                          to_pbm(sparse_image_mask(Direction::ImageToText, SparseKind::Column, 2, 2, 2)) ==
                              "P1\n6 6\n1 0 1 0 0 0\n0 1 0 1 0 0\n1 0 1 0 0 0\n0 1 0 1 0 0\n1 1 1 1 1 0\n1 1 1 1 1 1\n";
    checks.require(mismatched == 0 && fixtures, std::to_string(compared) + " geometries match the enumeration, " +
                                                    std::to_string(mismatched) + " mismatches");

    bool symmetric = true;
    for (auto kind : {SparseKind::Row, SparseKind::Column, SparseKind::Conv})
        for (std::size_t m = 0; m <= 6; ++m)
            for (std::size_t side = 1; side <= 4; ++side) {
                const auto mask = sparse_image_mask(Direction::ImageToText, kind, m, side, side);
                for (std::size_t q = 0; q < side * side; ++q)
                    for (std::size_t k = 0; k < side * side; ++k) symmetric = symmetric && mask.allowed(q, k) == mask.allowed(k, q);
            }
    checks.require(symmetric, "image-to-text image block symmetric");

    // One Row then one Column causal layer should connect each image position
    // to every earlier one.
    std::size_t missing = 0, grids = 0;
    for (std::size_t h = 1; h <= 6; ++h)
        for (std::size_t w = 1; w <= 6; ++w) {
            ++grids;
            const auto row = sparse_image_mask(Direction::TextToImage, SparseKind::Row, 0, h, w);
            const auto col = sparse_image_mask(Direction::TextToImage, SparseKind::Column, 0, h, w);
            const auto reach = testing::bool_product(col.allow, row.allow, h * w);
            for (std::size_t p = 0; p < h * w; ++p)
                for (std::size_t q = 0; q <= p; ++q) missing += reach[p * h * w + q] == 0;
        }
    checks.require(missing == 0, "row-then-column closure covers dense causal on " + std::to_string(grids) +
                                     " grids: " + std::to_string(missing) + " earlier positions unreached");
    return checks.out;
}

// 4 ----------------------------------------------------------------------

Outcome sparsity_accounting() {
    const std::size_t row = attended_pair_count(sparse_image_mask(Direction::TextToImage, SparseKind::Row, 0, 4, 4));
    const std::size_t dense = attended_pair_count(seq2seq_mask(Direction::TextToImage, 0, 16));
    const double reduction = 1.0 - static_cast<double>(row) / static_cast<double>(dense);
    Checks checks;
    checks.require(row == 40 && dense == 136, "row-causal " + std::to_string(row) + " vs dense-causal " +
                                                  std::to_string(dense) + " pairs, " + fmt(100 * reduction) + "% fewer");
    return checks.out;
}

// 5 ----------------------------------------------------------------------

Outcome loss_semantics() {
    Checks checks;
    ModelConfig c;
    Model model(c, 9);
    // Zeroed output heads make every logit 0 through the real forward pass.
    for (const Linear* head : {&model.image_head(), &model.text_head()})
        for (Tensor t : {head->weight, head->bias})
            for (auto& v : t.mutable_data()) v = 0.0;
    Rng rng(9);
    const auto text = random_ids(6, c.text_vocab, rng, 4);
    const auto image = random_ids(16, c.image_vocab, rng);
    const double t2i = loss_txt2img(model.forward({Direction::TextToImage, text, image}).logits, image).item();
    const double i2t = loss_img2txt(model.forward({Direction::ImageToText, text, image}).logits, text).item();
    const double err_t2i = std::abs(t2i - 16 * std::log(64.0)), err_i2t = std::abs(i2t - 6 * std::log(64.0));
    checks.require(err_t2i < 1e-9 && err_i2t < 1e-9,
                   "uniform logits: |L - n ln V| " + fmt(err_t2i) + ", |L - m ln V| " + fmt(err_i2t));

    Model trained(c, 10);
    std::vector<TokenPair> batch = {{random_ids(4, c.text_vocab, rng, 4), random_ids(16, c.image_vocab, rng)},
                                    {random_ids(6, c.text_vocab, rng, 4), random_ids(16, c.image_vocab, rng)}};
    const auto params = trained.parameters();
    zero_grads(params);
    auto joint = multitask_loss(trained, batch);
    const bool exact = joint.total.item() == joint.t2i + joint.i2t;
    joint.total.backward();
    const auto g_joint = grads_of(params);
    zero_grads(params);
    for (const auto& p : batch) loss_txt2img(trained.forward({Direction::TextToImage, p.text, p.image}).logits, p.image).backward();
    const auto g_t2i = grads_of(params);
    zero_grads(params);
    for (const auto& p : batch) loss_img2txt(trained.forward({Direction::ImageToText, p.text, p.image}).logits, p.text).backward();
    const auto g_i2t = grads_of(params);
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < g_joint[p].size(); ++i) worst = std::max(worst, std::abs(g_joint[p][i] - (g_t2i[p][i] + g_i2t[p][i])));
    checks.require(exact, "multitask total equals t2i + i2t exactly");
    checks.require(worst < 1e-10, "gradient additivity max abs diff " + fmt(worst));
    return checks.out;
}

// 6 and 10 share one trained fixture --------------------------------------

struct OverfitFixture {
    std::vector<Pair> corpus;
    std::vector<VisualTokens> tokens;
    std::unique_ptr<Model> model;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

OverfitFixture& overfit_fixture() {
    static OverfitFixture f = [] {
        OverfitFixture out;
        // First corpus seed whose eight captions are pairwise distinct.
        std::uint64_t seed = 0;
        for (;; ++seed) {
            out.corpus = generate_corpus(8, seed);
            std::set<std::string> captions;
            for (const auto& p : out.corpus) captions.insert(p.caption);
            if (captions.size() == 8) break;
        }
        std::vector<Image> images;
        for (const auto& p : out.corpus) images.push_back(p.image);
        const Tensor x = stack_images(images);
        Quantizer quantizer(QuantizerConfig{}, 1);
        VqTrainer vq(quantizer, AdamConfig{});
        for (int s = 0; s < 150; ++s) vq.step(x);
        out.tokens = quantizer.tokenize(x);

        std::vector<TokenPair> pairs;
        for (std::size_t i = 0; i < 8; ++i) pairs.push_back({out.corpus[i].tokens, out.tokens[i]});
        out.model = std::make_unique<Model>(ModelConfig{}, 3);
        Trainer trainer(*out.model, pairs, TrainerConfig{});
        {
            NoGradGuard no_grad;
            out.initial_loss = multitask_loss(*out.model, pairs).total.item();
        }
        for (int s = 0; s < 300; ++s) trainer.train_step();
        NoGradGuard no_grad;
        out.final_loss = multitask_loss(*out.model, pairs).total.item();
        return out;
    }();
    return f;
}

Outcome overfit_convergence() {
    auto& f = overfit_fixture();
    std::size_t matches = 0;
    for (std::size_t i = 0; i < 8; ++i) matches += caption_tokens(*f.model, f.tokens[i]) == f.corpus[i].tokens;
    Checks checks;
    checks.require(f.final_loss < 0.1 * f.initial_loss,
                   "loss " + fmt(f.initial_loss) + " -> " + fmt(f.final_loss) + " (" + fmt(100 * f.final_loss / f.initial_loss) + "%)");
    checks.require(matches >= 7, "greedy captions reproduce " + std::to_string(matches) + "/8");
    return checks.out;
}

// 7 ----------------------------------------------------------------------

Outcome direction_reproduction() {
    const CompareConfig config;
    const CompareReport report = compare_modes(config);
    std::ostringstream rows;
    for (const auto& s : report.seeds)
        rows << " seed " << s.seed << " G&R " << fmt(s.rows[0].mse) << "/" << fmt(s.rows[2].mse) << " gold R "
             << fmt(s.rows[3].mse) << "/" << fmt(s.rows[4].mse);
    Checks checks;
    checks.require(report.generation_wins() >= 2,
                   "end-to-end G&R <= two-stage G&R in " + std::to_string(report.generation_wins()) + "/3 seeds");
    checks.require(report.gold_wins() >= 2,
                   "end-to-end R <= two-stage R on gold in " + std::to_string(report.gold_wins()) + "/3 seeds");
    checks.out.detail += " (two-stage/end-to-end MSE:" + rows.str() + ")";
    return checks.out;
}

// 8 ----------------------------------------------------------------------

Outcome vq_contracts() {
    Checks checks;
    Rng rng(11);
    const std::size_t K = 64, d = 16;
    auto codebook = random_tensor({K, d}, rng, false);
    auto cells = random_tensor({1000, d}, rng, false);
    const auto r = quantize(cells, codebook);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < 1000; ++i) {
        int best = -1;
        double best_dist = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = cells.at(i * d + j) - codebook.at(k * d + j);
                dist += diff * diff;
            }
            if (best < 0 || dist < best_dist) {
                best = static_cast<int>(k);
                best_dist = dist;
            }
        }
        mismatches += r.ids[i] != best;
    }
    checks.require(mismatches == 0, "1000 cells vs exhaustive nearest neighbour: " + std::to_string(mismatches) + " mismatches");

    Quantizer q(tiny_quantizer(), 21);
    auto x = random_tensor({1, 8, 8, 3}, rng, false, 0.0, 1.0);
    const Tensor e_fixed = q.lookup(q.tokenize(x)[0], 1);
    const double fixed_point = vq_loss(x, x, e_fixed, e_fixed, 1.0).total.item();
    checks.require(fixed_point == 0.0, "loss at x_hat = x, e = z_emb: " + fmt(fixed_point));

    Tensor e = q.encode(x).detach();
    e.set_requires_grad(true);
    const auto quantized = q.quantize(e);
    auto loss = vq_loss(x, q.decode(straight_through(e, quantized.z_emb)), e, quantized.z_emb, 1.0);
    zero_grads(q.parameters());
    loss.total.backward();
    const std::vector<double> analytic(e.grad().begin(), e.grad().end());
    NoGradGuard no_grad;
    const double h = 1e-5;
    const std::vector<double> z(quantized.z_emb.data().begin(), quantized.z_emb.data().end());
    const std::vector<double> ev(e.data().begin(), e.data().end());
    auto recon_at = [&](const std::vector<double>& zz) { return squared_error(x, q.decode(Tensor::from_data(e.shape(), zz))).item(); };
    auto pull_at = [&](const std::vector<double>& ee) {
        double s = 0.0;
        for (std::size_t i = 0; i < ee.size(); ++i) s += (z[i] - ee[i]) * (z[i] - ee[i]);
        return s;
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        auto zp = z, zm = z, ep = ev, em = ev;
        zp[i] += h;
        zm[i] -= h;
        ep[i] += h;
        em[i] -= h;
        const double numeric = (recon_at(zp) - recon_at(zm)) / (2 * h) + (pull_at(ep) - pull_at(em)) / (2 * h);
        worst = std::max(worst, testing::relative_error(analytic[i], numeric));
    }
    checks.require(worst < 1e-6, "straight-through gradient vs per-term oracle: relative error " + fmt(worst));
    return checks.out;
}

// 9 ----------------------------------------------------------------------

RunConfig persistence_config() {
    return parse_config(
        "corpus.image_side = 8\n"
        "vq.reduction_factor = 4\n"
        "vq.codebook_size = 8\n"
        "vq.code_dim = 3\n"
        "vq.hidden_channels = 4\n"
        "model.layers = 4\n"
        "model.d_model = 16\n"
        "model.heads = 2\n"
        "model.text_vocab = 32\n"
        "sampler.top_k = 8\n"
        "train.batch_size = 3\n"
        "t2i.mode = end-to-end\n");
}

struct PersistenceRun {
    RunConfig config = persistence_config();
    Quantizer quantizer{config.quantizer, 1};
    Model model{config.model, 2};
    EndToEndReconstructor recon{quantizer, config.model.d_model, 3};
    std::vector<TokenPair> pairs;
    std::vector<T2IExample> examples;

    PersistenceRun() {
        std::vector<Image> images;
        const auto corpus = generate_corpus(6, 5, config.corpus);
        for (const auto& p : corpus) images.push_back(p.image);
        VqTrainer vq(quantizer, config.train.adam);
        for (int s = 0; s < 3; ++s) vq.step(stack_images(images));
        examples = make_t2i_examples(corpus, quantizer);
        for (const auto& ex : examples) pairs.push_back({ex.text, ex.image_tokens});
    }
    AuxiliaryObjective aux(const Model& m, const EndToEndReconstructor& r) const {
        return reconstruction_objective(m, r, quantizer, examples, config.rec_weight, config.train.normalize_loss);
    }
};

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism_and_persistence() {
    Checks checks;
    const fs::path dir = fs::temp_directory_path() / "evlg_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    PersistenceRun a, b;
    Trainer ta(a.model, a.pairs, a.config.train, a.aux(a.model, a.recon));
    Trainer tb(b.model, b.pairs, b.config.train, b.aux(b.model, b.recon));
    for (int s = 0; s < 4; ++s) {
        ta.train_step();
        tb.train_step();
    }
    checks.require(values_of(a.model.parameters()) == values_of(b.model.parameters()) &&
                       values_of(a.recon.parameters()) == values_of(b.recon.parameters()) &&
                       values_of(a.quantizer.parameters()) == values_of(b.quantizer.parameters()),
                   "two fixed-seed runs bitwise identical");

    // Interrupted: 3 steps, save, load, 1 step. Uninterrupted: `a` after 4 steps.
    PersistenceRun first;
    Trainer tf(first.model, first.pairs, first.config.train, first.aux(first.model, first.recon));
    for (int s = 0; s < 3; ++s) tf.train_step();
    save_checkpoint(dir / "step3.ckpt",
                    model_checkpoint(first.config, first.quantizer, first.model, &first.recon, &tf.optimizer(), tf.step()));
    ModelState s = restore_model(load_checkpoint(dir / "step3.ckpt"));
    Trainer tr(s.model, first.pairs, s.config.train, first.aux(s.model, *s.reconstructor));
    tr.optimizer().load_state(s.optimizer_state);
    tr.set_step(s.step);
    tr.train_step();
    checks.require(values_of(s.model.parameters()) == values_of(a.model.parameters()) &&
                       values_of(s.reconstructor->parameters()) == values_of(a.recon.parameters()) &&
                       values_of(tr.optimizer().state()) == values_of(ta.optimizer().state()) && tr.step() == ta.step(),
                   "save/load/step equals uninterrupted run bitwise");

    // Round trip: load(save(state)) then save again gives the same bytes.
    save_checkpoint(dir / "a.ckpt", model_checkpoint(a.config, a.quantizer, a.model, &a.recon, &ta.optimizer(), ta.step()));
    ModelState loaded = restore_model(load_checkpoint(dir / "a.ckpt"));
    ParameterList trainable = loaded.model.parameters();
    for (const auto& p : loaded.reconstructor->parameters()) trainable.push_back(p);
    Adam adam(trainable, loaded.config.train.adam);
    adam.load_state(loaded.optimizer_state);
    save_checkpoint(dir / "b.ckpt", model_checkpoint(loaded.config, loaded.quantizer, loaded.model, loaded.reconstructor.get(),
                                                     &adam, loaded.step));
    const bool identical_params = values_of(loaded.model.parameters()) == values_of(a.model.parameters()) &&
                                  values_of(loaded.quantizer.parameters()) == values_of(a.quantizer.parameters());
    checks.require(identical_params && file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"),
                   "checkpoint round trip bitwise (" + std::to_string(fs::file_size(dir / "a.ckpt")) + " bytes)");
    fs::remove_all(dir);
    return checks.out;
}

// 10 ---------------------------------------------------------------------

Outcome rerank() {
    auto& f = overfit_fixture();
    Rng rng(99);
    std::size_t picked = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        std::vector<std::vector<int>> candidates;
        for (int k = 0; k < 9; ++k) candidates.push_back(random_ids(16, 64, rng));
        candidates.insert(candidates.begin() + static_cast<std::ptrdiff_t>(i), f.tokens[i]);
        picked += rerank_select(candidates, f.corpus[i].tokens, cycle_consistency_scorer(*f.model)).best == i;
    }
    Checks checks;
    checks.require(picked >= 7, "gold picked out of 10 candidates for " + std::to_string(picked) + "/8 prompts");
    return checks.out;
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;  // 0: no runtime bound
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient integrity", 120, gradient_integrity},
        {2, "sparse/dense equivalence", 60, sparse_dense_equivalence},
        {3, "mask fixtures", 0, mask_fixtures},
        {4, "sparsity accounting", 0, sparsity_accounting},
        {5, "loss semantics", 0, loss_semantics},
        {6, "overfit convergence", 600, overfit_convergence},
        {7, "two-stage vs end-to-end direction", 1800, direction_reproduction},
        {8, "VQ contracts", 0, vq_contracts},
        {9, "determinism and persistence", 0, determinism_and_persistence},
        {10, "rerank", 0, rerank},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.limit_seconds > 0 && seconds >= c.limit_seconds) {
            out.pass = false;
            out.detail += "; runtime over the " + fmt(c.limit_seconds) + " s limit";
        }
        failures += !out.pass;
        std::printf("criterion %d (%s): %s  %s  [%.1f s]\n", c.id, c.name, out.pass ? "PASS" : "FAIL", out.detail.c_str(), seconds);
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
