#include "evlg/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evlg/errors.hpp"
#include "evlg/ops.hpp"

namespace evlg {

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const char* op) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw DimensionError(std::string(op) + ": q, k, v must share a 2-D shape, got " + shape_to_string(q.shape()) +
                             ", " + shape_to_string(k.shape()) + ", " + shape_to_string(v.shape()));
    }
    if (heads == 0 || q.dim(1) % heads != 0) {
        throw DimensionError(std::string(op) + ": width " + std::to_string(q.dim(1)) + " not divisible by " +
                             std::to_string(heads) + " heads");
    }
}

}  // namespace

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       std::span<const std::uint8_t> allow) {
    check_qkv(q, k, v, heads, "dense_attention");
    const std::size_t dh = q.dim(1) / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outputs;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh), kh = slice_cols(k, h * dh, dh), vh = slice_cols(v, h * dh, dh);
        Tensor probs = masked_softmax(scale(matmul(qh, transpose(kh)), inv), allow);
        outputs.push_back(matmul(probs, vh));
    }
    return heads == 1 ? outputs[0] : concat_cols(outputs);
}

Tensor block_sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                              const AttentionSchedule& schedule) {
    check_qkv(q, k, v, heads, "block_sparse_attention");
    const std::size_t L = q.dim(0), D = q.dim(1), dh = D / heads;
    if (schedule.length < L) {
        throw ContractError("block_sparse_attention: schedule covers " + std::to_string(schedule.length) +
                            " queries, sequence has " + std::to_string(L));
    }
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    auto Q = q.data(), K = k.data(), V = v.data();

    // probs[h][slot] for the schedule slots of the first L queries.
    const std::size_t slots = schedule.end(L - 1);
    std::vector<double> probs(heads * slots);
    std::vector<double> out(L * D, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
        const std::size_t b = schedule.begin(i), e = schedule.end(i);
        if (b == e) throw ContractError("block_sparse_attention: query " + std::to_string(i) + " attends nothing");
        for (std::size_t h = 0; h < heads; ++h) {
            double* p = probs.data() + h * slots;
            const double* qi = Q.data() + i * D + h * dh;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t s = b; s < e; ++s) {
                const std::size_t j = schedule.keys[s];
                if (j >= L) throw ContractError("block_sparse_attention: key beyond the sequence");
                const double* kj = K.data() + j * D + h * dh;
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                p[s] = dot * inv;
                mx = std::max(mx, p[s]);
            }
            double total = 0.0;
            for (std::size_t s = b; s < e; ++s) {
                p[s] = std::exp(p[s] - mx);
                total += p[s];
            }
            double* oi = out.data() + i * D + h * dh;
            for (std::size_t s = b; s < e; ++s) {
                p[s] /= total;
                const double* vj = V.data() + schedule.keys[s] * D + h * dh;
                for (std::size_t c = 0; c < dh; ++c) oi[c] += p[s] * vj[c];
            }
        }
    }

    auto backward = [L, D, dh, heads, slots, inv, schedule, probs = std::move(probs)](detail::Node& self) {
        detail::Node& nq = *self.parents[0];
        detail::Node& nk = *self.parents[1];
        detail::Node& nv = *self.parents[2];
        std::vector<double> gq(L * D, 0.0), gk(L * D, 0.0), gv(L * D, 0.0);
        std::vector<double> dp;
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t b = schedule.begin(i), e = schedule.end(i);
            dp.assign(e - b, 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
                const double* p = probs.data() + h * slots;
                const double* go = self.grad.data() + i * D + h * dh;
                const double* qi = nq.data.data() + i * D + h * dh;
                double weighted = 0.0;
                for (std::size_t s = b; s < e; ++s) {
                    const std::size_t j = schedule.keys[s];
                    const double* vj = nv.data.data() + j * D + h * dh;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dot += go[c] * vj[c];
                        gv[j * D + h * dh + c] += p[s] * go[c];
                    }
                    dp[s - b] = dot;
                    weighted += p[s] * dot;
                }
                for (std::size_t s = b; s < e; ++s) {
                    const std::size_t j = schedule.keys[s];
                    const double ds = p[s] * (dp[s - b] - weighted) * inv;
                    const double* kj = nk.data.data() + j * D + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) {
                        gq[i * D + h * dh + c] += ds * kj[c];
                        gk[j * D + h * dh + c] += ds * qi[c];
                    }
                }
            }
        }
        auto accumulate = [](detail::Node& n, const std::vector<double>& g) {
            if (!n.requires_grad) return;
            auto buf = n.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
        };
        accumulate(nq, gq);
        accumulate(nk, gk);
        accumulate(nv, gv);
    };
    return make_result({L, D}, std::move(out), {q, k, v}, std::move(backward));
}

std::vector<std::uint8_t> leading_block(const AttentionMask& mask, std::size_t length) {
    const std::size_t L = mask.length();
    if (length > L) throw ContractError("leading_block: " + std::to_string(length) + " exceeds mask of " + std::to_string(L));
    std::vector<std::uint8_t> out(length * length);
    for (std::size_t i = 0; i < length; ++i)
        std::copy_n(mask.allow.begin() + static_cast<std::ptrdiff_t>(i * L), length, out.begin() + static_cast<std::ptrdiff_t>(i * length));
    return out;
}

}  // namespace evlg
