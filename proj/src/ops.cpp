#include "evlg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "evlg/errors.hpp"

namespace evlg {

namespace {

using detail::Node;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

// Applies a unary elementwise map with derivative expressed from (x, y).
template <class Forward, class Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
    auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
    if (b.dim(0) != q) {
        throw DimensionError("matmul: inner extents disagree, " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    }
    auto A = a.data();
    auto B = b.data();
    std::vector<double> out(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        double* row = out.data() + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = A[i * q + k];
            const double* brow = B.data() + k * r;
            for (std::size_t j = 0; j < r; ++j) row[j] += aik * brow[j];
        }
    }
    return make_result({p, r}, std::move(out), {a, b}, [p, q, r](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        const double* G = self.grad.data();
        if (na.requires_grad) {
            // dA = G * B^T
            auto ga = na.grad_buffer();
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t k = 0; k < q; ++k) {
                    const double* brow = nb.data.data() + k * r;
                    const double* grow = G + i * r;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
                    ga[i * q + k] += acc;
                }
            }
        }
        if (nb.requires_grad) {
            // dB = A^T * G
            auto gb = nb.grad_buffer();
            for (std::size_t i = 0; i < p; ++i) {
                const double* grow = G + i * r;
                for (std::size_t k = 0; k < q; ++k) {
                    const double aik = na.data[i * q + k];
                    double* gbrow = gb.data() + k * r;
                    for (std::size_t j = 0; j < r; ++j) gbrow[j] += aik * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
    return make_result({cols, rows}, std::move(out), {a}, [rows, cols](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += self.grad[j * rows + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) continue;
            auto g = parent->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto x = a.data();
    auto y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        if (na.requires_grad) {
            auto g = na.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
        }
        if (nb.requires_grad) {
            auto g = nb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor square(const Tensor& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    require_rank(a, 2, "add_bias");
    require_rank(bias, 1, "add_bias");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (bias.dim(0) != cols) {
        throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                             shape_to_string(a.shape()));
    }
    auto x = a.data();
    auto b = bias.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = x[i * cols + j] + b[j];
    return make_result(a.shape(), std::move(out), {a, bias}, [rows, cols](Node& self) {
        if (self.parents[0]->requires_grad) {
            auto g = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.parents[1]->requires_grad) {
            auto g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) g[j] += self.grad[i * cols + j];
        }
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    return make_result({1}, {total}, {a}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor squared_error(const Tensor& a, const Tensor& b) { return sum(square(sub(a, b))); }

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [inv_sqrt_2pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor activate(const Tensor& a, Activation kind) { return kind == Activation::Gelu ? gelu(a) : evlg::tanh(a); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    require_rank(gamma, 1, "layer_norm");
    require_rank(beta, 1, "layer_norm");
    if (gamma.dim(0) != d || beta.dim(0) != d) {
        throw DimensionError("layer_norm: affine parameters " + shape_to_string(gamma.shape()) + " / " +
                             shape_to_string(beta.shape()) + " do not match " + shape_to_string(x.shape()));
    }
    auto in = x.data();
    auto gm = gamma.data();
    auto bt = beta.data();
    std::vector<double> normalized(in.size());
    std::vector<double> inv_std(rows);
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double n = (row[j] - mean) * inv_std[r];
            normalized[r * d + j] = n;
            out[r * d + j] = n * gm[j] + bt[j];
        }
    }
    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [d, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
            Node& nx = *self.parents[0];
            Node& ng = *self.parents[1];
            Node& nb = *self.parents[2];
            const double* G = self.grad.data();
            if (ng.requires_grad) {
                auto g = ng.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += G[r * d + j] * normalized[r * d + j];
            }
            if (nb.requires_grad) {
                auto g = nb.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += G[r * d + j];
            }
            if (nx.requires_grad) {
                auto g = nx.grad_buffer();
                std::vector<double> dn(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dn = 0.0, mean_dn_n = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dn[j] = G[r * d + j] * ng.data[j];
                        mean_dn += dn[j];
                        mean_dn_n += dn[j] * normalized[r * d + j];
                    }
                    mean_dn /= static_cast<double>(d);
                    mean_dn_n /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        g[r * d + j] += inv_std[r] * (dn[j] - mean_dn - normalized[r * d + j] * mean_dn_n);
                    }
                }
            }
        });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " + shape_to_string(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t leading = 0;
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& part : parts) {
        Shape t(part.shape().begin() + 1, part.shape().end());
        if (t != trailing) {
            throw DimensionError("concat: trailing shape " + shape_to_string(part.shape()) + " vs " +
                                 shape_to_string(parts[0].shape()));
        }
        offsets.push_back(out.size());
        out.insert(out.end(), part.data().begin(), part.data().end());
        leading += part.dim(0);
    }
    Shape shape{leading};
    shape.insert(shape.end(), trailing.begin(), trailing.end());
    std::vector<Tensor> parents(parts.begin(), parts.end());
    return make_result(std::move(shape), std::move(out), std::move(parents), [offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto g = p.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::vector<std::size_t> widths, col_offsets;
    std::size_t total = 0;
    for (const auto& part : parts) {
        require_rank(part, 2, "concat_cols");
        if (part.dim(0) != rows) {
            throw DimensionError("concat_cols: row count " + shape_to_string(part.shape()) + " vs " +
                                 shape_to_string(parts[0].shape()));
        }
        col_offsets.push_back(total);
        widths.push_back(part.dim(1));
        total += part.dim(1);
    }
    std::vector<double> out(rows * total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto in = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + col_offsets[k] + c] = in[r * widths[k] + c];
    }
    std::vector<Tensor> parents(parts.begin(), parts.end());
    return make_result({rows, total}, std::move(out), std::move(parents), [rows, total, widths, col_offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            auto g = p.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + col_offsets[k] + c];
        }
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (a.rank() < 1 || begin + count > a.dim(0) || count == 0) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_to_string(a.shape()));
    }
    const std::size_t stride = a.size() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = count;
    auto in = a.data();
    std::vector<double> out(in.begin() + begin * stride, in.begin() + (begin + count) * stride);
    return make_result(std::move(shape), std::move(out), {a}, [begin, stride](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * stride + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    require_rank(a, 2, "slice_cols");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (begin + count > cols || count == 0) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                             ") out of range for " + shape_to_string(a.shape()));
    }
    auto in = a.data();
    std::vector<double> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) out[r * count + c] = in[r * cols + begin + c];
    return make_result({rows, count}, std::move(out), {a}, [rows, cols, begin, count](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < count; ++c) g[r * cols + begin + c] += self.grad[r * count + c];
    });
}

Tensor embed_lookup(const Tensor& table, std::span<const int> ids) {
    require_rank(table, 2, "embed_lookup");
    if (ids.empty()) throw DimensionError("embed_lookup: empty id list");
    const std::size_t rows = table.dim(0), d = table.dim(1);
    std::vector<int> idx(ids.begin(), ids.end());
    auto in = table.data();
    std::vector<double> out(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
            throw IndexError("embed_lookup: id " + std::to_string(idx[i]) + " outside table of " +
                             std::to_string(rows) + " rows");
        }
        std::copy_n(in.begin() + idx[i] * d, d, out.begin() + i * d);
    }
    const std::size_t count = idx.size();
    return make_result({count, d}, std::move(out), {table}, [idx = std::move(idx), d](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
    });
}

Tensor masked_softmax(const Tensor& scores, std::span<const std::uint8_t> allow) {
    require_rank(scores, 2, "masked_softmax");
    if (allow.size() != scores.size()) {
        throw DimensionError("masked_softmax: mask of " + std::to_string(allow.size()) + " entries for scores " +
                             shape_to_string(scores.shape()));
    }
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    auto in = scores.data();
    std::vector<double> out(in.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c)
            if (allow[r * cols + c]) mx = std::max(mx, in[r * cols + c]);
        if (mx == -std::numeric_limits<double>::infinity()) {
            throw ContractError("masked_softmax: row " + std::to_string(r) + " attends nothing");
        }
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!allow[r * cols + c]) continue;
            out[r * cols + c] = std::exp(in[r * cols + c] - mx);
            total += out[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
    }
    return make_result(scores.shape(), std::move(out), {scores}, [rows, cols](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * cols;
            const double* gy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() != 1 && logits.rank() != 2) {
        throw DimensionError("softmax_cross_entropy: logits must be 1-D or 2-D, got " + shape_to_string(logits.shape()));
    }
    const std::size_t rows = logits.rank() == 1 ? 1 : logits.dim(0);
    const std::size_t vocab = logits.shape().back();
    if (targets.size() != rows) {
        throw ContractError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                            std::to_string(rows) + " rows");
    }
    auto in = logits.data();
    std::vector<double> probs(in.size());
    std::vector<int> tgt(targets.begin(), targets.end());
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(tgt[r]) + " outside vocabulary of " +
                             std::to_string(vocab));
        }
        const double* row = in.data() + r * vocab;
        std::size_t arg = 0;
        for (std::size_t c = 1; c < vocab; ++c)
            if (row[c] > row[arg]) arg = c;
        const double mx = row[arg];
        double rest = 0.0;  // sum of exp over non-max entries, for log1p accuracy
        for (std::size_t c = 0; c < vocab; ++c) {
            const double e = std::exp(row[c] - mx);
            probs[r * vocab + c] = e;
            if (c != arg) rest += e;
        }
        const double total = 1.0 + rest;
        for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] /= total;
        loss += mx + std::log1p(rest) - row[tgt[r]];
    }
    return make_result({1}, {loss}, {logits}, [probs = std::move(probs), tgt = std::move(tgt), vocab](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        const double s = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * probs[i];
        for (std::size_t r = 0; r < tgt.size(); ++r) g[r * vocab + tgt[r]] -= s;
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, int target) {
    const int targets[1] = {target};
    return softmax_cross_entropy(logits, std::span<const int>(targets));
}

Tensor stop_gradient(const Tensor& a) { return a.detach(); }

Tensor straight_through(const Tensor& input, const Tensor& quantized) {
    require_same_shape(input, quantized, "straight_through");
    std::vector<double> out(quantized.data().begin(), quantized.data().end());
    return make_result(quantized.shape(), std::move(out), {input}, [](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

std::size_t ConvGeometry::output_extent(std::size_t input_extent) const {
    const std::size_t padded = input_extent + 2 * padding;
    if (padded < kernel || stride == 0) {
        throw DimensionError("conv: input extent " + std::to_string(input_extent) + " too small for kernel " +
                             std::to_string(kernel));
    }
    return (padded - kernel) / stride + 1;
}

Tensor im2col(const Tensor& x, const ConvGeometry& geo) {
    require_rank(x, 4, "im2col");
    const std::size_t batch = x.dim(0), height = x.dim(1), width = x.dim(2), channels = x.dim(3);
    const std::size_t out_h = geo.output_extent(height), out_w = geo.output_extent(width);
    const std::size_t k = geo.kernel;
    const std::size_t patch = k * k * channels;
    // Source flat index for each patch entry, or -1 for padding.
    std::vector<std::ptrdiff_t> source(batch * out_h * out_w * patch, -1);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const std::size_t row = (b * out_h + oy) * out_w + ox;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                                              static_cast<std::ptrdiff_t>(geo.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(geo.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                        const std::ptrdiff_t base =
                            ((static_cast<std::ptrdiff_t>(b) * height + iy) * width + ix) * channels;
                        for (std::size_t c = 0; c < channels; ++c) {
                            source[row * patch + (ky * k + kx) * channels + c] = base + c;
                        }
                    }
                }
            }
        }
    }
    auto in = x.data();
    std::vector<double> out(source.size(), 0.0);
    for (std::size_t i = 0; i < source.size(); ++i)
        if (source[i] >= 0) out[i] = in[source[i]];
    return make_result({batch * out_h * out_w, patch}, std::move(out), {x}, [source = std::move(source)](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < source.size(); ++i)
            if (source[i] >= 0) g[source[i]] += self.grad[i];
    });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
    require_rank(x, 4, "upsample_nearest");
    if (factor == 0) throw DimensionError("upsample_nearest: factor must be positive");
    const std::size_t batch = x.dim(0), height = x.dim(1), width = x.dim(2), channels = x.dim(3);
    const std::size_t out_h = height * factor, out_w = width * factor;
    auto in = x.data();
    std::vector<double> out(batch * out_h * out_w * channels);
    auto source_of = [=](std::size_t b, std::size_t y, std::size_t xx) {
        return ((b * height + y / factor) * width + xx / factor) * channels;
    };
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t xx = 0; xx < out_w; ++xx) {
                const std::size_t dst = ((b * out_h + y) * out_w + xx) * channels;
                const std::size_t src = source_of(b, y, xx);
                for (std::size_t c = 0; c < channels; ++c) out[dst + c] = in[src + c];
            }
    return make_result({batch, out_h, out_w, channels}, std::move(out), {x},
                       [=](Node& self) {
                           Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto g = p.grad_buffer();
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t y = 0; y < out_h; ++y)
                                   for (std::size_t xx = 0; xx < out_w; ++xx) {
                                       const std::size_t dst = ((b * out_h + y) * out_w + xx) * channels;
                                       const std::size_t src = source_of(b, y, xx);
                                       for (std::size_t c = 0; c < channels; ++c) g[src + c] += self.grad[dst + c];
                                   }
                       });
}

}  // namespace evlg
