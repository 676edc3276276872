#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace evlg {

// Which modality is the source. TextToImage lays out [text, image],
// ImageToText lays out [image, text]; the second segment is generated.
enum class Direction { TextToImage, ImageToText };

enum class SparseKind { Row, Column, Conv, Dense };

const char* direction_name(Direction direction);
const char* sparse_kind_name(SparseKind kind);

// Everything a mask is a function of.
struct MaskGeometry {
    Direction direction = Direction::TextToImage;
    SparseKind kind = SparseKind::Dense;
    std::size_t text_length = 0;  // m
    std::size_t grid_rows = 1;    // h
    std::size_t grid_cols = 1;    // w
    std::size_t kernel = 3;       // conv window side, odd

    std::size_t image_length() const { return grid_rows * grid_cols; }
    std::size_t length() const { return text_length + image_length(); }
    std::size_t source_length() const;
    bool is_image(std::size_t position) const;
    bool is_target(std::size_t position) const;
    // Raster index within the image segment; position must be an image position.
    std::size_t image_index(std::size_t position) const;

    bool operator==(const MaskGeometry&) const = default;
};

// Dense L x L visibility matrix; allow[q * L + k] != 0 iff query q may attend key k.
struct AttentionMask {
    MaskGeometry geometry;
    std::vector<std::uint8_t> allow;

    std::size_t length() const { return geometry.length(); }
    bool allowed(std::size_t query, std::size_t key) const { return allow[query * length() + key] != 0; }
};

// Layer i (1-based) of total: Conv for the last layer, Column when i mod 4 == 2, Row otherwise.
SparseKind layer_kind(std::size_t layer, std::size_t total_layers);

// Dense seq2seq baseline: source block fully visible to itself, target
// positions see the whole source plus their own left context.
AttentionMask seq2seq_mask(Direction direction, std::size_t text_length, std::size_t image_length);

// Grid-structured image attention. Image neighborhoods are causal for
// TextToImage and bidirectional for ImageToText.
AttentionMask sparse_image_mask(Direction direction, SparseKind kind, std::size_t text_length, std::size_t grid_rows,
                                std::size_t grid_cols, std::size_t kernel = 3);

AttentionMask build_mask(const MaskGeometry& geometry);

std::size_t attended_pair_count(const AttentionMask& mask);

// Plain PBM (P1) rendering, one row of 0/1 per query.
std::string to_pbm(const AttentionMask& mask);

// Per-query key lists in ascending order (CSR), produced by enumerating the
// row / column / window blocks directly rather than by scanning a matrix.
struct AttentionSchedule {
    std::size_t length = 0;
    std::vector<std::size_t> offsets;  // length + 1 entries
    std::vector<std::size_t> keys;

    std::size_t begin(std::size_t query) const { return offsets[query]; }
    std::size_t end(std::size_t query) const { return offsets[query + 1]; }
};

AttentionSchedule block_schedule(const MaskGeometry& geometry);

// Materializes a schedule into a matrix (for comparing the two paths).
AttentionMask schedule_to_mask(const MaskGeometry& geometry, const AttentionSchedule& schedule);

}  // namespace evlg
