#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evlg/tensor.hpp"

namespace evlg {

enum class ShapeKind { Circle, Square, Triangle };
enum class Color { Red, Green, Blue, Yellow };

// Cells of the 2x2 layout in reading order.
enum class Cell { TopLeft, TopRight, BottomLeft, BottomRight };

struct SceneObject {
    ShapeKind shape;
    Color color;
    Cell cell;
    bool operator==(const SceneObject&) const = default;
};

// Objects sorted by cell, at most one object per cell.
struct ShapeScene {
    std::vector<SceneObject> objects;
    bool operator==(const ShapeScene&) const = default;
};

const char* shape_word(ShapeKind shape);
const char* color_word(Color color);
const char* cell_word(Cell cell);

// Word count of the caption for a scene with `objects` objects.
std::size_t caption_words(std::size_t objects);

// Lossless caption. One object: "<color> <shape> <cell>". Two objects in
// reading order: "<color> <shape> <color> <shape> <layout>" with layout one of
// top, bottom, left, right, diagonal, antidiagonal. Three objects: the three
// pairs followed by the cell left empty.
std::string caption_for(const ShapeScene& scene);
// Inverse of caption_for. Throws ContractError on anything it did not produce.
ShapeScene parse_caption(const std::string& caption);

struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;  // row-major, 3 channels, values in [0, 1]
    bool operator==(const Image&) const = default;
};

// Dark background, flat-colored shapes centered in their layout cell. Channel
// levels are 0.1 and 0.9.
Image render(const ShapeScene& scene, std::size_t side);

// Uniform random scene with 1..max_objects objects in distinct cells.
ShapeScene random_scene(std::uint64_t seed, std::size_t max_objects);

// Images stacked into [B x H x W x 3].
Tensor stack_images(std::span<const Image> images);
Image image_from_batch(const Tensor& batch, std::size_t index);

// Special ids come first; words follow in a fixed order.
class Vocabulary {
   public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;

    Vocabulary();

    std::size_t size() const { return words_.size(); }
    int id(const std::string& word) const;  // ContractError if unknown
    const std::string& word(int id) const;
    bool is_special(int id) const { return id >= 0 && id <= kSep; }

    // Whitespace-split words to ids, no specials appended.
    std::vector<int> encode(const std::string& text) const;
    // Words up to the first EOS, specials dropped, "<unk>" for ids past the vocabulary.
    std::string decode(std::span<const int> ids) const;
    // encode(text) followed by EOS.
    std::vector<int> caption_tokens(const std::string& text) const;

    // Words the content filter treats as nouns.
    std::vector<std::string> nouns() const;

   private:
    std::vector<std::string> words_;
};

struct CorpusOptions {
    std::size_t image_side = 32;
    std::size_t max_objects = 2;
    std::size_t max_text_length = 6;  // including EOS

    // Throws ConfigError when the longest caption cannot fit.
    void validate() const;
};

struct Pair {
    ShapeScene scene;
    Image image;
    std::string caption;
    std::vector<int> tokens;  // caption ids ending in EOS
};

// Pair i uses the sub-seed derive_seed(seed, i).
std::vector<Pair> generate_corpus(std::size_t count, std::uint64_t seed, const CorpusOptions& options = {});

// Generative VQA over scenes: "<attribute> <ordinal>" questions with a
// single-word answer. Attributes: color, shape, where; ordinals follow
// reading order.
struct VqaExample {
    std::size_t pair_index;
    std::string question;
    std::string answer;
};
std::vector<VqaExample> vqa_examples(std::span<const Pair> corpus);

// Corpus filtering.
struct CorpusRecord {
    std::string text;
    std::string image_ref;
    std::optional<double> similarity;
};

std::size_t word_count(const std::string& text);
bool filter_text_length(const CorpusRecord& record, std::size_t limit = 15);
bool filter_content(const CorpusRecord& record, std::span<const std::string> noun_lexicon);
// Throws ContractError if the similarity is missing.
bool filter_similarity(const CorpusRecord& record, double threshold = 0.5);
bool passes_all_filters(const CorpusRecord& record, std::span<const std::string> noun_lexicon, double threshold = 0.5);

// Toy text-text scorer: multiset word overlap divided by the longer length.
// A placeholder for a learned image-text similarity model.
double toy_overlap_similarity(const std::string& text, const std::string& reference);

// Manifest: one "image_path<TAB>caption" record per line.
void write_manifest(const std::filesystem::path& path, std::span<const CorpusRecord> records);
std::vector<CorpusRecord> read_manifest(const std::filesystem::path& path);

// Binary P6, 8-bit.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
// Header line "f64 <height> <width> 3" then little-endian doubles.
void write_raw(const std::filesystem::path& path, const Image& image);
Image read_raw(const std::filesystem::path& path);

}  // namespace evlg
