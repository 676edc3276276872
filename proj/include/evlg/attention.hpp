#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "evlg/masks.hpp"
#include "evlg/tensor.hpp"

namespace evlg {

// Multi-head scaled dot-product attention over one sequence.
// q, k, v: [L x D] with D = heads * head_dim -> [L x D].

// Composite-op path: per-head score matrices and a masked softmax over the
// materialized L x L mask (row-major, allow[q * L + k]).
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       std::span<const std::uint8_t> allow);

// Fused path that only visits the keys listed by the schedule, with a
// hand-written backward pass. Only the first q.dim(0) queries are used.
Tensor block_sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                              const AttentionSchedule& schedule);

// Leading length x length block of a mask.
std::vector<std::uint8_t> leading_block(const AttentionMask& mask, std::size_t length);

}  // namespace evlg
