#include "evlg/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "evlg/errors.hpp"
#include "evlg/rng.hpp"

namespace evlg {

namespace {

constexpr std::array<const char*, 3> kShapeWords = {"circle", "square", "triangle"};
constexpr std::array<const char*, 4> kColorWords = {"red", "green", "blue", "yellow"};
constexpr std::array<const char*, 4> kCellWords = {"topleft", "topright", "bottomleft", "bottomright"};
// Indexed by the pair of occupied cells.
constexpr std::array<const char*, 6> kLayoutWords = {"top", "bottom", "left", "right", "diagonal", "antidiagonal"};
constexpr std::array<std::array<int, 2>, 6> kLayoutCells = {{{0, 1}, {2, 3}, {0, 2}, {1, 3}, {0, 3}, {1, 2}}};
constexpr std::array<const char*, 6> kQuestionWords = {"color", "shape", "where", "one", "two", "three"};

constexpr double kLo = 0.1, kHi = 0.9;
constexpr std::array<std::array<double, 3>, 4> kRgb = {
    {{kHi, kLo, kLo}, {kLo, kHi, kLo}, {kLo, kLo, kHi}, {kHi, kHi, kLo}}};

template <std::size_t N>
int find_word(const std::array<const char*, N>& words, const std::string& w) {
    for (std::size_t i = 0; i < N; ++i)
        if (w == words[i]) return static_cast<int>(i);
    return -1;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

bool inside(ShapeKind shape, double dx, double dy, double cell) {
    switch (shape) {
        case ShapeKind::Circle: {
            const double r = 0.375 * cell;
            return dx * dx + dy * dy <= r * r;
        }
        case ShapeKind::Square:
            return std::abs(dx) <= 0.3125 * cell && std::abs(dy) <= 0.3125 * cell;
        case ShapeKind::Triangle: {
            const double half_height = 0.35 * cell;
            if (dy < -half_height || dy > half_height) return false;
            return std::abs(dx) <= 0.375 * cell * (dy + half_height) / (2.0 * half_height);
        }
    }
    return false;
}

void write_f64_le(std::ostream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
}

double read_f64_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

const char* shape_word(ShapeKind shape) { return kShapeWords[static_cast<int>(shape)]; }
const char* color_word(Color color) { return kColorWords[static_cast<int>(color)]; }
const char* cell_word(Cell cell) { return kCellWords[static_cast<int>(cell)]; }

std::size_t caption_words(std::size_t objects) {
    switch (objects) {
        case 1:
            return 3;
        case 2:
            return 5;
        case 3:
            return 7;
    }
    throw ContractError("scenes hold 1 to 3 objects, got " + std::to_string(objects));
}

std::string caption_for(const ShapeScene& scene) {
    const auto& objs = scene.objects;
    caption_words(objs.size());
    std::string out;
    auto append = [&out](const char* w) {
        if (!out.empty()) out += ' ';
        out += w;
    };
    for (const auto& o : objs) {
        append(color_word(o.color));
        append(shape_word(o.shape));
    }
    if (objs.size() == 1) {
        append(cell_word(objs[0].cell));
    } else if (objs.size() == 2) {
        const int a = static_cast<int>(objs[0].cell), b = static_cast<int>(objs[1].cell);
        for (std::size_t i = 0; i < kLayoutCells.size(); ++i)
            if (kLayoutCells[i][0] == a && kLayoutCells[i][1] == b) append(kLayoutWords[i]);
    } else {
        int empty = 0;
        for (const auto& o : objs)
            if (static_cast<int>(o.cell) == empty) ++empty;
        append(kCellWords[empty]);
    }
    return out;
}

ShapeScene parse_caption(const std::string& caption) {
    const auto words = split_words(caption);
    auto fail = [&caption](const std::string& why) -> ContractError {
        return ContractError("cannot parse caption \"" + caption + "\": " + why);
    };
    std::size_t objects = 0;
    for (std::size_t k = 1; k <= 3; ++k)
        if (words.size() == caption_words(k)) objects = k;
    if (objects == 0) throw fail("unexpected word count " + std::to_string(words.size()));

    std::vector<int> cells;
    const std::string& last = words.back();
    if (objects == 1) {
        const int c = find_word(kCellWords, last);
        if (c < 0) throw fail("unknown cell \"" + last + "\"");
        cells = {c};
    } else if (objects == 2) {
        const int l = find_word(kLayoutWords, last);
        if (l < 0) throw fail("unknown layout \"" + last + "\"");
        cells = {kLayoutCells[l][0], kLayoutCells[l][1]};
    } else {
        const int empty = find_word(kCellWords, last);
        if (empty < 0) throw fail("unknown cell \"" + last + "\"");
        for (int c = 0; c < 4; ++c)
            if (c != empty) cells.push_back(c);
    }

    ShapeScene scene;
    for (std::size_t i = 0; i < objects; ++i) {
        const int color = find_word(kColorWords, words[2 * i]);
        const int shape = find_word(kShapeWords, words[2 * i + 1]);
        if (color < 0) throw fail("unknown color \"" + words[2 * i] + "\"");
        if (shape < 0) throw fail("unknown shape \"" + words[2 * i + 1] + "\"");
        scene.objects.push_back({static_cast<ShapeKind>(shape), static_cast<Color>(color), static_cast<Cell>(cells[i])});
    }
    return scene;
}

Image render(const ShapeScene& scene, std::size_t side) {
    if (side == 0 || side % 2 != 0) throw ConfigError("image side must be even and positive, got " + std::to_string(side));
    Image img{side, side, std::vector<double>(side * side * 3, kLo)};
    const double cell = static_cast<double>(side / 2);
    for (const auto& o : scene.objects) {
        const std::size_t ci = static_cast<std::size_t>(o.cell);
        const std::size_t y0 = (ci / 2) * (side / 2), x0 = (ci % 2) * (side / 2);
        const auto& rgb = kRgb[static_cast<int>(o.color)];
        for (std::size_t y = y0; y < y0 + side / 2; ++y)
            for (std::size_t x = x0; x < x0 + side / 2; ++x) {
                const double dx = static_cast<double>(x - x0) + 0.5 - cell / 2;
                const double dy = static_cast<double>(y - y0) + 0.5 - cell / 2;
                if (!inside(o.shape, dx, dy, cell)) continue;
                for (int ch = 0; ch < 3; ++ch) img.pixels[(y * side + x) * 3 + ch] = rgb[ch];
            }
    }
    return img;
}

ShapeScene random_scene(std::uint64_t seed, std::size_t max_objects) {
    Rng rng(seed);
    const std::size_t count = 1 + rng.index(max_objects);
    std::array<int, 4> cells = {0, 1, 2, 3};
    rng.shuffle(cells.begin(), cells.end());
    std::sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(count));
    ShapeScene scene;
    for (std::size_t i = 0; i < count; ++i) {
        const auto shape = static_cast<ShapeKind>(rng.index(3));
        const auto color = static_cast<Color>(rng.index(4));
        scene.objects.push_back({shape, color, static_cast<Cell>(cells[i])});
    }
    return scene;
}

Tensor stack_images(std::span<const Image> images) {
    if (images.empty()) throw ContractError("stack_images: empty batch");
    const std::size_t h = images[0].height, w = images[0].width;
    std::vector<double> data;
    data.reserve(images.size() * h * w * 3);
    for (const auto& img : images) {
        if (img.height != h || img.width != w) throw DimensionError("stack_images: mixed image sizes");
        data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    return Tensor::from_data({images.size(), h, w, 3}, std::move(data));
}

Image image_from_batch(const Tensor& batch, std::size_t index) {
    if (batch.rank() != 4 || batch.dim(3) != 3) throw DimensionError("expected [B x H x W x 3], got " + shape_to_string(batch.shape()));
    if (index >= batch.dim(0)) throw IndexError("image " + std::to_string(index) + " of batch " + std::to_string(batch.dim(0)));
    const std::size_t h = batch.dim(1), w = batch.dim(2), n = h * w * 3;
    auto src = batch.data().subspan(index * n, n);
    return Image{h, w, std::vector<double>(src.begin(), src.end())};
}

Vocabulary::Vocabulary() {
    words_ = {"<pad>", "<bos>", "<eos>", "<sep>"};
    for (auto w : kColorWords) words_.emplace_back(w);
    for (auto w : kShapeWords) words_.emplace_back(w);
    for (auto w : kCellWords) words_.emplace_back(w);
    for (auto w : kLayoutWords) words_.emplace_back(w);
    for (auto w : kQuestionWords) words_.emplace_back(w);
}

int Vocabulary::id(const std::string& word) const {
    auto it = std::find(words_.begin() + kSep + 1, words_.end(), word);
    if (it == words_.end()) throw ContractError("word \"" + word + "\" is not in the vocabulary");
    return static_cast<int>(it - words_.begin());
}

const std::string& Vocabulary::word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(words_.size()));
    return words_[id];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::string out;
    for (int t : ids) {
        if (t == kEos) break;
        if (is_special(t)) continue;
        if (!out.empty()) out += ' ';
        out += t >= 0 && static_cast<std::size_t>(t) < words_.size() ? words_[t] : std::string("<unk>");
    }
    return out;
}

std::vector<int> Vocabulary::caption_tokens(const std::string& text) const {
    auto ids = encode(text);
    ids.push_back(kEos);
    return ids;
}

std::vector<std::string> Vocabulary::nouns() const { return {kShapeWords.begin(), kShapeWords.end()}; }

void CorpusOptions::validate() const {
    if (max_objects < 1 || max_objects > 3) throw ConfigError("max_objects must be 1, 2 or 3");
    const std::size_t longest = caption_words(max_objects) + 1;
    if (longest > max_text_length) {
        throw ConfigError("captions with " + std::to_string(max_objects) + " objects need max_text_length >= " +
                          std::to_string(longest));
    }
    if (image_side == 0 || image_side % 2 != 0) throw ConfigError("image_side must be even");
}

std::vector<Pair> generate_corpus(std::size_t count, std::uint64_t seed, const CorpusOptions& options) {
    if (count == 0) throw ContractError("generate_corpus: count must be at least 1");
    options.validate();
    Vocabulary vocab;
    std::vector<Pair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Pair p;
        p.scene = random_scene(derive_seed(seed, i), options.max_objects);
        p.image = render(p.scene, options.image_side);
        p.caption = caption_for(p.scene);
        p.tokens = vocab.caption_tokens(p.caption);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<VqaExample> vqa_examples(std::span<const Pair> corpus) {
    static constexpr std::array<const char*, 3> ordinals = {"one", "two", "three"};
    std::vector<VqaExample> out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& objs = corpus[i].scene.objects;
        for (std::size_t k = 0; k < objs.size(); ++k) {
            const std::string ord = ordinals[k];
            out.push_back({i, "color " + ord, color_word(objs[k].color)});
            out.push_back({i, "shape " + ord, shape_word(objs[k].shape)});
            out.push_back({i, "where " + ord, cell_word(objs[k].cell)});
        }
    }
    return out;
}

std::size_t word_count(const std::string& text) { return split_words(text).size(); }

bool filter_text_length(const CorpusRecord& record, std::size_t limit) { return word_count(record.text) < limit; }

bool filter_content(const CorpusRecord& record, std::span<const std::string> noun_lexicon) {
    for (unsigned char ch : record.text) {
        if (std::isalnum(ch) || ch == ' ' || ch == '.' || ch == ',' || ch == '!') continue;
        return false;
    }
    for (auto w : split_words(record.text)) {
        while (!w.empty() && (w.back() == '.' || w.back() == ',' || w.back() == '!')) w.pop_back();
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (std::find(noun_lexicon.begin(), noun_lexicon.end(), w) != noun_lexicon.end()) return true;
    }
    return false;
}

bool filter_similarity(const CorpusRecord& record, double threshold) {
    if (!record.similarity) throw ContractError("record \"" + record.text + "\" has no similarity score");
    return *record.similarity > threshold;
}

bool passes_all_filters(const CorpusRecord& record, std::span<const std::string> noun_lexicon, double threshold) {
    return filter_text_length(record) && filter_content(record, noun_lexicon) && filter_similarity(record, threshold);
}

double toy_overlap_similarity(const std::string& text, const std::string& reference) {
    const auto a = split_words(text), b = split_words(reference);
    if (a.empty() || b.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& w : b) ++counts[w];
    std::size_t overlap = 0;
    for (const auto& w : a)
        if (counts[w]-- > 0) ++overlap;
    return static_cast<double>(overlap) / static_cast<double>(std::max(a.size(), b.size()));
}

void write_manifest(const std::filesystem::path& path, std::span<const CorpusRecord> records) {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot write manifest " + path.string());
    for (const auto& r : records) {
        out << r.image_ref << '\t' << r.text;
        if (r.similarity) out << '\t' << *r.similarity;
        out << '\n';
    }
}

std::vector<CorpusRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot read manifest " + path.string());
    std::vector<CorpusRecord> out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ContractError(path.string() + ":" + std::to_string(lineno) + ": expected image path, tab, caption");
        }
        CorpusRecord r;
        r.image_ref = line.substr(0, tab);
        std::string rest = line.substr(tab + 1);
        const auto tab2 = rest.find('\t');
        if (tab2 != std::string::npos) {
            try {
                r.similarity = std::stod(rest.substr(tab2 + 1));
            } catch (const std::exception&) {
                throw ContractError(path.string() + ":" + std::to_string(lineno) + ": bad similarity value");
            }
            rest.resize(tab2);
        }
        r.text = rest;
        out.push_back(std::move(r));
    }
    return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot write image " + path.string());
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    for (double v : image.pixels) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    if (!(in >> magic >> w >> h >> maxval) || magic != "P6" || maxval != 255)
        throw ContractError("not an 8-bit P6 image: " + path.string());
    in.get();
    Image img{h, w, std::vector<double>(h * w * 3)};
    std::vector<unsigned char> bytes(img.pixels.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ContractError("truncated image " + path.string());
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
    return img;
}

void write_raw(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot write image " + path.string());
    out << "f64 " << image.height << ' ' << image.width << " 3\n";
    for (double v : image.pixels) write_f64_le(out, v);
}

Image read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::string tag;
    std::size_t h = 0, w = 0, c = 0;
    if (!(in >> tag >> h >> w >> c) || tag != "f64" || c != 3) throw ContractError("not a raw f64 image: " + path.string());
    in.get();
    Image img{h, w, std::vector<double>(h * w * 3)};
    for (auto& v : img.pixels) v = read_f64_le(in);
    if (!in) throw ContractError("truncated image " + path.string());
    return img;
}

}  // namespace evlg
