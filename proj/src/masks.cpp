#include "evlg/masks.hpp"

#include <algorithm>
#include <sstream>

#include "evlg/errors.hpp"

namespace evlg {

const char* direction_name(Direction direction) {
    return direction == Direction::TextToImage ? "text_to_image" : "image_to_text";
}

const char* sparse_kind_name(SparseKind kind) {
    switch (kind) {
        case SparseKind::Row:
            return "row";
        case SparseKind::Column:
            return "column";
        case SparseKind::Conv:
            return "conv";
        case SparseKind::Dense:
            return "dense";
    }
    return "unknown";
}

std::size_t MaskGeometry::source_length() const {
    return direction == Direction::TextToImage ? text_length : image_length();
}

bool MaskGeometry::is_image(std::size_t position) const {
    return direction == Direction::TextToImage ? position >= text_length : position < image_length();
}

bool MaskGeometry::is_target(std::size_t position) const { return position >= source_length(); }

std::size_t MaskGeometry::image_index(std::size_t position) const {
    return direction == Direction::TextToImage ? position - text_length : position;
}

SparseKind layer_kind(std::size_t layer, std::size_t total_layers) {
    if (layer < 1 || layer > total_layers) {
        throw IndexError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(total_layers));
    }
    if (layer == total_layers) return SparseKind::Conv;
    return layer % 4 == 2 ? SparseKind::Column : SparseKind::Row;
}

namespace {

void validate(const MaskGeometry& g) {
    if (g.grid_rows == 0 || g.grid_cols == 0) throw ConfigError("image grid must be at least 1x1");
    if (g.kernel % 2 == 0) throw ConfigError("conv kernel must be odd, got " + std::to_string(g.kernel));
}

bool same_neighborhood(const MaskGeometry& g, std::size_t a, std::size_t b) {
    const std::size_t ra = a / g.grid_cols, ca = a % g.grid_cols;
    const std::size_t rb = b / g.grid_cols, cb = b % g.grid_cols;
    const std::size_t half = g.kernel / 2;
    auto near = [half](std::size_t x, std::size_t y) { return (x > y ? x - y : y - x) <= half; };
    switch (g.kind) {
        case SparseKind::Row:
            return ra == rb;
        case SparseKind::Column:
            return ca == cb;
        case SparseKind::Conv:
            return near(ra, rb) && near(ca, cb);
        case SparseKind::Dense:
            return true;
    }
    return false;
}

// Pairwise visibility rule.
bool visible(const MaskGeometry& g, std::size_t query, std::size_t key) {
    const bool q_image = g.is_image(query), k_image = g.is_image(key);
    const bool q_target = g.is_target(query), k_target = g.is_target(key);
    if (!q_target) {
        // Source positions see source positions only.
        if (k_target) return false;
        if (q_image) return same_neighborhood(g, g.image_index(query), g.image_index(key));
        return true;
    }
    if (!k_target) return true;  // targets see the whole source
    if (key > query) return false;
    if (q_image && k_image) return same_neighborhood(g, g.image_index(query), g.image_index(key));
    return true;
}

}  // namespace

AttentionMask build_mask(const MaskGeometry& geometry) {
    validate(geometry);
    AttentionMask mask{geometry, {}};
    const std::size_t L = geometry.length();
    mask.allow.assign(L * L, 0);
    for (std::size_t q = 0; q < L; ++q)
        for (std::size_t k = 0; k < L; ++k) mask.allow[q * L + k] = visible(geometry, q, k) ? 1 : 0;
    return mask;
}

AttentionMask seq2seq_mask(Direction direction, std::size_t text_length, std::size_t image_length) {
    if (image_length == 0) throw ContractError("seq2seq_mask: image segment must be non-empty");
    return build_mask({direction, SparseKind::Dense, text_length, 1, image_length, 1});
}

AttentionMask sparse_image_mask(Direction direction, SparseKind kind, std::size_t text_length, std::size_t grid_rows,
                                std::size_t grid_cols, std::size_t kernel) {
    return build_mask({direction, kind, text_length, grid_rows, grid_cols, kernel});
}

std::size_t attended_pair_count(const AttentionMask& mask) {
    return static_cast<std::size_t>(std::count_if(mask.allow.begin(), mask.allow.end(), [](auto v) { return v != 0; }));
}

std::string to_pbm(const AttentionMask& mask) {
    const std::size_t L = mask.length();
    std::ostringstream out;
    out << "P1\n" << L << ' ' << L << '\n';
    for (std::size_t q = 0; q < L; ++q) {
        for (std::size_t k = 0; k < L; ++k) {
            if (k) out << ' ';
            out << (mask.allowed(q, k) ? '1' : '0');
        }
        out << '\n';
    }
    return out.str();
}

AttentionSchedule block_schedule(const MaskGeometry& g) {
    validate(g);
    const std::size_t m = g.text_length, n = g.image_length(), w = g.grid_cols, h = g.grid_rows;
    const bool t2i = g.direction == Direction::TextToImage;
    const std::size_t text_base = t2i ? 0 : n;
    const std::size_t image_base = t2i ? m : 0;
    const std::size_t half = g.kernel / 2;

    AttentionSchedule s;
    s.length = g.length();
    s.offsets.reserve(s.length + 1);
    s.offsets.push_back(0);
    auto push_range = [&](std::size_t first, std::size_t last_exclusive) {
        for (std::size_t k = first; k < last_exclusive; ++k) s.keys.push_back(k);
    };
    // Keys of the image block for image cell (r, c); `causal` clips at the cell itself.
    auto push_image_block = [&](std::size_t r, std::size_t c, bool causal) {
        const std::size_t self = r * w + c;
        switch (g.kind) {
            case SparseKind::Row:
                push_range(image_base + r * w, image_base + r * w + (causal ? c + 1 : w));
                break;
            case SparseKind::Column:
                for (std::size_t rr = 0; rr < (causal ? r + 1 : h); ++rr) s.keys.push_back(image_base + rr * w + c);
                break;
            case SparseKind::Conv: {
                const std::size_t r0 = r >= half ? r - half : 0, r1 = std::min(h - 1, r + half);
                const std::size_t c0 = c >= half ? c - half : 0, c1 = std::min(w - 1, c + half);
                for (std::size_t rr = r0; rr <= (causal ? r : r1); ++rr) {
                    const std::size_t stop = (causal && rr == r) ? c : c1;
                    push_range(image_base + rr * w + c0, image_base + rr * w + stop + 1);
                }
                break;
            }
            case SparseKind::Dense:
                push_range(image_base, image_base + (causal ? self + 1 : n));
                break;
        }
    };

    for (std::size_t q = 0; q < s.length; ++q) {
        const bool q_image = g.is_image(q);
        if (t2i) {
            if (!q_image) {
                push_range(text_base, text_base + m);
            } else {
                const std::size_t idx = q - image_base;
                push_range(text_base, text_base + m);
                push_image_block(idx / w, idx % w, true);
            }
        } else {
            if (q_image) {
                push_image_block(q / w, q % w, false);
            } else {
                push_range(image_base, image_base + n);
                push_range(text_base, q + 1);
            }
        }
        s.offsets.push_back(s.keys.size());
    }
    return s;
}

AttentionMask schedule_to_mask(const MaskGeometry& geometry, const AttentionSchedule& schedule) {
    AttentionMask mask{geometry, {}};
    const std::size_t L = geometry.length();
    mask.allow.assign(L * L, 0);
    for (std::size_t q = 0; q < L; ++q)
        for (std::size_t i = schedule.begin(q); i < schedule.end(q); ++i) mask.allow[q * L + schedule.keys[i]] = 1;
    return mask;
}

}  // namespace evlg
