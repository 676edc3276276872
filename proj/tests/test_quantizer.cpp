#include <doctest.h>

#include <cmath>
#include <limits>

#include "evlg/data.hpp"
#include "evlg/errors.hpp"
#include "evlg/quantizer.hpp"
#include "gradcheck.hpp"

using namespace evlg;

namespace {

QuantizerConfig tiny_config() {
    QuantizerConfig c;
    c.image_side = 8;
    c.reduction_factor = 2;
    c.codebook_size = 8;
    c.code_dim = 3;
    c.hidden_channels = 4;
    return c;
}

Tensor random_images(std::size_t batch, std::size_t side, Rng& rng) {
    return testing::random_tensor({batch, side, side, 3}, rng, false, 0.0, 1.0);
}

// Brute-force nearest row, scanning every row with an explicit running minimum.
int nearest_row(std::span<const double> cell, const std::vector<std::vector<double>>& rows) {
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        double dist = 0.0;
        for (std::size_t j = 0; j < cell.size(); ++j) dist += (cell[j] - rows[k][j]) * (cell[j] - rows[k][j]);
        if (best < 0 || dist < best_dist) {
            best = static_cast<int>(k);
            best_dist = dist;
        }
    }
    return best;
}

}  // namespace

TEST_SUITE("quantizer") {
    TEST_CASE("config validation") {
        QuantizerConfig c;
        CHECK_NOTHROW(c.validate());
        CHECK(c.grid_side() == 4);
        CHECK(c.sequence_length() == 16);
        c.image_side = 30;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c.image_side = 36;
        c.reduction_factor = 6;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(Quantizer(c, 1), ConfigError);
    }

    TEST_CASE("quantize examples") {
        auto codebook = Tensor::from_data({2, 2}, {0, 0, 1, 1});
        auto r = quantize(Tensor::from_data({1, 2}, {0.9, 0.8}), codebook);
        CHECK(r.ids == std::vector<int>{1});

        auto single = Tensor::from_data({1, 3}, {0.2, -0.1, 0.4});
        Rng rng(3);
        auto cells = testing::random_tensor({2, 2, 2, 3}, rng, false);
        for (int id : quantize(cells, single).ids) CHECK(id == 0);

        auto book = Tensor::from_data({3, 2}, {0, 0, 5, -1, 2, 2});
        auto exact = quantize(Tensor::from_data({1, 2}, {5, -1}), book);
        CHECK(exact.ids == std::vector<int>{1});
        CHECK(std::vector<double>(exact.z_emb.data().begin(), exact.z_emb.data().end()) == std::vector<double>{5, -1});

        // Equidistant from rows 0 and 1: lowest index wins.
        auto tie = quantize(Tensor::from_data({1, 2}, {0.5, 0.5}), Tensor::from_data({2, 2}, {0, 0, 1, 1}));
        CHECK(tie.ids == std::vector<int>{0});
    }

    TEST_CASE("quantize matches the exhaustive oracle on 1000 cells") {
        Rng rng(11);
        const std::size_t K = 64, d = 16;
        auto codebook = testing::random_tensor({K, d}, rng, false);
        auto cells = testing::random_tensor({1000, d}, rng, false);
        std::vector<std::vector<double>> rows(K);
        for (std::size_t k = 0; k < K; ++k) rows[k].assign(codebook.data().begin() + k * d, codebook.data().begin() + (k + 1) * d);
        auto r = quantize(cells, codebook);
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < 1000; ++i) {
            const int expected = nearest_row(cells.data().subspan(i * d, d), rows);
            if (r.ids[i] != expected) ++mismatches;
            for (std::size_t j = 0; j < d; ++j)
                if (r.z_emb.at(i * d + j) != rows[expected][j]) ++mismatches;
        }
        CHECK(mismatches == 0);
        CHECK(quantize(r.z_emb, codebook).ids == r.ids);
    }

    TEST_CASE("vq loss values") {
        auto x = Tensor::zeros({1, 2, 2, 3});
        auto e = Tensor::from_data({1, 3}, {1, 0, 0});
        auto z = Tensor::zeros({1, 3});
        auto terms = vq_loss(x, x, e, z, 1.0);
        CHECK(terms.total.item() == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(terms.reconstruction == 0.0);
        CHECK(terms.codebook_pull == 1.0);
        CHECK(terms.code_update == 1.0);
        CHECK(vq_loss(x, x, e, e, 1.0).total.item() == 0.0);
        CHECK(vq_loss(x, x, e, z, 0.0).total.item() == 1.0);
    }

    TEST_CASE("encode and decode shapes") {
        Quantizer q(QuantizerConfig{}, 5);
        auto zeros = Tensor::zeros({2, 32, 32, 3});
        auto e = q.encode(zeros);
        CHECK(e.shape() == Shape{2, 4, 4, 16});
        for (double v : e.data()) CHECK(std::isfinite(v));
        auto decoded = q.decode(q.quantize(e).z_emb);
        CHECK(decoded.shape() == Shape{2, 32, 32, 3});
        CHECK_THROWS_AS(q.encode(Tensor::zeros({1, 16, 16, 3})), DimensionError);
        CHECK_THROWS_AS(q.decode(Tensor::zeros({1, 2, 2, 16})), DimensionError);
        CHECK_THROWS_AS(q.encode(Tensor::full({1, 32, 32, 3}, 1.5)), ContractError);
    }

    TEST_CASE("encode determinism and receptive field") {
        Quantizer q(tiny_config(), 9);
        Rng rng(2);
        auto one = random_images(1, 8, rng);
        std::vector<double> doubled(one.data().begin(), one.data().end());
        doubled.insert(doubled.end(), one.data().begin(), one.data().end());
        auto e = q.encode(Tensor::from_data({2, 8, 8, 3}, doubled));
        const std::size_t half = e.size() / 2;
        for (std::size_t i = 0; i < half; ++i) CHECK(e.at(i) == e.at(half + i));

        auto base = q.encode(one);
        std::vector<double> pixels(one.data().begin(), one.data().end());
        pixels[(3 * 8 + 5) * 3 + 1] = pixels[(3 * 8 + 5) * 3 + 1] > 0.5 ? 0.0 : 1.0;
        auto moved = q.encode(Tensor::from_data(one.shape(), pixels));
        double delta = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) delta += std::abs(base.at(i) - moved.at(i));
        CHECK(delta > 0.0);
    }

    TEST_CASE("round trip stays in range for arbitrary images") {
        Quantizer q(tiny_config(), 4);
        Rng rng(8);
        for (int trial = 0; trial < 3; ++trial) {
            auto x = random_images(2, 8, rng);
            auto ids = q.quantize(q.encode(x)).ids;
            auto out = q.decode(q.lookup(ids, 2));
            CHECK(out.shape() == x.shape());
            for (double v : out.data()) CHECK((v >= 0.0 && v <= 1.0));
            CHECK(q.quantize(q.lookup(ids, 2)).ids == ids);
            auto again = q.decode(q.lookup(ids, 2));
            CHECK(std::equal(out.data().begin(), out.data().end(), again.data().begin()));
        }
        CHECK_THROWS_AS(q.lookup(std::vector<int>{0, 1}, 1), ContractError);
    }

    TEST_CASE("straight-through gradient matches the per-term oracle") {
        Quantizer q(tiny_config(), 21);
        Rng rng(5);
        auto x = random_images(1, 8, rng);
        Tensor e = q.encode(x).detach();
        e.set_requires_grad(true);
        auto quantized = q.quantize(e);
        auto x_hat = q.decode(straight_through(e, quantized.z_emb));
        auto loss = vq_loss(x, x_hat, e, quantized.z_emb, 1.0);
        zero_grads(q.parameters());
        loss.total.backward();
        std::vector<double> analytic(e.grad().begin(), e.grad().end());

        // Reconstruction term: finite differences in the decoder input at z_emb.
        // Commitment term: finite differences in e with z_emb held constant.
        NoGradGuard no_grad;
        const double h = 1e-5;
        std::vector<double> z(quantized.z_emb.data().begin(), quantized.z_emb.data().end());
        std::vector<double> ev(e.data().begin(), e.data().end());
        auto recon_at = [&](const std::vector<double>& zz) {
            return squared_error(x, q.decode(Tensor::from_data(e.shape(), zz))).item();
        };
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
        CHECK(worst < 1e-6);
    }

    TEST_CASE("codebook gradient touches selected rows only") {
        for (double beta : {1.0, 0.0}) {
            QuantizerConfig config = tiny_config();
            config.codebook_size = 32;
            config.commitment_weight = beta;
            Quantizer q(config, 13);
            Rng rng(1);
            auto fwd = q.forward(random_images(1, 8, rng));
            zero_grads(q.parameters());
            fwd.loss.total.backward();
            std::vector<bool> selected(config.codebook_size, false);
            for (int id : fwd.quantized.ids) selected[id] = true;
            const auto& book = q.codebook();
            bool outside_zero = true, inside_nonzero = true;
            for (std::size_t k = 0; k < config.codebook_size; ++k) {
                double mag = 0.0;
                if (book.has_grad())
                    for (std::size_t j = 0; j < config.code_dim; ++j) mag += std::abs(book.grad()[k * config.code_dim + j]);
                if (!selected[k] && mag != 0.0) outside_zero = false;
                if (selected[k] && mag == 0.0) inside_nonzero = false;
            }
            CHECK(outside_zero);
            if (beta == 0.0) {
                // Without the third term nothing pulls codebook rows.
                CHECK(fwd.loss.code_update == 0.0);
                CHECK((!book.has_grad() || std::all_of(book.grad().begin(), book.grad().end(), [](double g) { return g == 0.0; })));
            } else {
                CHECK(inside_nonzero);
            }
        }
    }

    TEST_CASE("dead code fraction") {
        CHECK(dead_code_fraction({{0, 1}, {1, 3}}, 4) == doctest::Approx(0.25));
        CHECK(dead_code_fraction({{0, 1, 2, 3}}, 4) == 0.0);
    }

    TEST_CASE("overfits four fixed images") {
        auto corpus = generate_corpus(4, 5);
        std::vector<Image> images;
        for (const auto& p : corpus) images.push_back(p.image);
        auto x = stack_images(images);
        Quantizer q(QuantizerConfig{}, 1);
        VqTrainer trainer(q, AdamConfig{});
        for (int step = 0; step < 300; ++step) trainer.step(x);
        NoGradGuard no_grad;
        auto out = q.decode(q.quantize(q.encode(x)).z_emb);
        const double mse = squared_error(x, out).item() / static_cast<double>(x.size());
        MESSAGE("per-pixel mse after 300 steps: " << mse);
        CHECK(mse < 1e-2);
    }
}
