#include <doctest.h>

#include <filesystem>
#include <cmath>
#include <map>

#include "evlg/data.hpp"
#include "evlg/errors.hpp"
#include "evlg/quantizer.hpp"

using namespace evlg;

namespace {

CorpusRecord rec(std::string text, std::optional<double> sim = std::nullopt) { return {std::move(text), "x.ppm", sim}; }

std::string words(std::size_t n) {
    std::string s = "circle";
    for (std::size_t i = 1; i < n; ++i) s += " red";
    return s;
}

std::filesystem::path scratch_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / ("evlg_test_" + std::string(name));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("data") {
    TEST_CASE("caption grammar") {
        ShapeScene one{{{ShapeKind::Circle, Color::Red, Cell::TopRight}}};
        CHECK(caption_for(one) == "red circle topright");
        ShapeScene two{{{ShapeKind::Circle, Color::Red, Cell::TopLeft}, {ShapeKind::Square, Color::Blue, Cell::BottomLeft}}};
        CHECK(caption_for(two) == "red circle blue square left");
        ShapeScene three{{{ShapeKind::Triangle, Color::Green, Cell::TopLeft},
                          {ShapeKind::Square, Color::Yellow, Cell::TopRight},
                          {ShapeKind::Circle, Color::Blue, Cell::BottomRight}}};
        CHECK(caption_for(three) == "green triangle yellow square blue circle bottomleft");
        CHECK(parse_caption(caption_for(three)) == three);
        CHECK_THROWS_AS(parse_caption("red circle"), ContractError);
        CHECK_THROWS_AS(parse_caption("red blob topleft"), ContractError);
    }

    TEST_CASE("every scene round-trips through its caption") {
        for (std::size_t objects = 1; objects <= 3; ++objects)
            for (std::uint64_t seed = 0; seed < 300; ++seed) {
                auto scene = random_scene(seed, objects);
                CHECK(parse_caption(caption_for(scene)) == scene);
            }
    }

    TEST_CASE("rendering") {
        ShapeScene scene{{{ShapeKind::Square, Color::Yellow, Cell::BottomRight}}};
        auto img = render(scene, 32);
        CHECK(img.pixels.size() == 32 * 32 * 3);
        auto px = [&](std::size_t y, std::size_t x, int c) { return img.pixels[(y * 32 + x) * 3 + c]; };
        CHECK(px(24, 24, 0) == 0.9);
        CHECK(px(24, 24, 1) == 0.9);
        CHECK(px(24, 24, 2) == 0.1);
        CHECK(px(4, 4, 0) == 0.1);
        for (double v : img.pixels) CHECK((v == 0.1 || v == 0.9));
        // Shapes differ from each other at the same cell.
        auto circle = render({{{ShapeKind::Circle, Color::Red, Cell::TopLeft}}}, 32);
        auto square = render({{{ShapeKind::Square, Color::Red, Cell::TopLeft}}}, 32);
        auto triangle = render({{{ShapeKind::Triangle, Color::Red, Cell::TopLeft}}}, 32);
        CHECK(circle != square);
        CHECK(square != triangle);
        CHECK(circle != triangle);
        CHECK_THROWS_AS(render(scene, 7), ConfigError);
    }

    TEST_CASE("corpus generation") {
        auto a = generate_corpus(16, 7);
        auto b = generate_corpus(16, 7);
        CHECK(a.size() == 16);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].image == b[i].image);
            CHECK(a[i].caption == b[i].caption);
            CHECK(a[i].tokens.size() <= 6);
            CHECK(a[i].tokens.back() == Vocabulary::kEos);
            CHECK(std::count(a[i].tokens.begin(), a[i].tokens.end(), Vocabulary::kEos) == 1);
            CHECK(render(parse_caption(a[i].caption), 32) == a[i].image);
        }
        auto c = generate_corpus(16, 8);
        bool differs = false;
        for (std::size_t i = 0; i < 16; ++i) differs = differs || c[i].caption != a[i].caption;
        CHECK(differs);
        CHECK_THROWS_AS(generate_corpus(0, 1), ContractError);
        CHECK_THROWS_AS(generate_corpus(1, 1, CorpusOptions{32, 3, 6}), ConfigError);
        CHECK_NOTHROW(generate_corpus(1, 1, CorpusOptions{32, 3, 8}));
    }

    TEST_CASE("corpus images quantize to full-length sequences") {
        auto corpus = generate_corpus(4, 3);
        std::vector<Image> images;
        for (const auto& p : corpus) {
            images.push_back(p.image);
            for (double v : p.image.pixels) CHECK((v >= 0.0 && v <= 1.0));
        }
        Quantizer q(QuantizerConfig{}, 1);
        auto tokens = q.tokenize(stack_images(images));
        CHECK(tokens.size() == 4);
        for (const auto& t : tokens) {
            CHECK(t.size() == 16);
            for (int id : t) CHECK((id >= 0 && id < 64));
        }
    }

    TEST_CASE("class balance over 2000 scenes") {
        auto corpus = generate_corpus(2000, 99);
        std::map<int, int> shapes, colors;
        int total = 0;
        for (const auto& p : corpus)
            for (const auto& o : p.scene.objects) {
                ++shapes[static_cast<int>(o.shape)];
                ++colors[static_cast<int>(o.color)];
                ++total;
            }
        for (int s = 0; s < 3; ++s) CHECK(std::abs(shapes[s] - total / 3.0) <= 0.2 * total / 3.0);
        for (int c = 0; c < 4; ++c) CHECK(std::abs(colors[c] - total / 4.0) <= 0.2 * total / 4.0);
    }

    TEST_CASE("vocabulary") {
        Vocabulary v;
        CHECK(v.size() <= 64);
        auto ids = v.caption_tokens("red circle topleft");
        CHECK(ids.size() == 4);
        CHECK(v.decode(ids) == "red circle topleft");
        std::vector<int> padded = {Vocabulary::kBos, ids[0], ids[1], Vocabulary::kEos, ids[2]};
        CHECK(v.decode(padded) == "red circle");
        CHECK(v.decode(std::vector<int>{40, 2}) == "<unk>");
        CHECK_THROWS_AS(v.id("purple"), ContractError);
        CHECK_THROWS_AS(v.word(999), IndexError);
    }

    TEST_CASE("vqa examples") {
        auto corpus = generate_corpus(5, 2);
        auto qa = vqa_examples(corpus);
        Vocabulary v;
        std::size_t expected = 0;
        for (const auto& p : corpus) expected += 3 * p.scene.objects.size();
        CHECK(qa.size() == expected);
        for (const auto& e : qa) {
            CHECK(v.encode(e.question).size() + 1 + 1 + 1 <= 6);
            CHECK(v.encode(e.answer).size() == 1);
        }
    }

    TEST_CASE("text length filter") {
        CHECK(filter_text_length(rec(words(14))));
        CHECK_FALSE(filter_text_length(rec(words(15))));
        CHECK(filter_text_length(rec("circle")));
    }

    TEST_CASE("content filter") {
        auto nouns = Vocabulary().nouns();
        CHECK(filter_content(rec("red circle"), nouns));
        CHECK_FALSE(filter_content(rec("red shiny"), nouns));
        CHECK_FALSE(filter_content(rec("red circle #1"), nouns));
        CHECK(filter_content(rec("A red circle, left!"), nouns));
        CHECK(filter_content(rec("Circle."), nouns));
    }

    TEST_CASE("similarity filter") {
        CHECK(filter_similarity(rec("x", 0.51)));
        CHECK_FALSE(filter_similarity(rec("x", 0.50)));
        CHECK(filter_similarity(rec("x", 1.0)));
        CHECK_THROWS_AS(filter_similarity(rec("x")), ContractError);
    }

    TEST_CASE("filters commute") {
        auto nouns = Vocabulary().nouns();
        std::vector<CorpusRecord> records = {rec("red circle", 0.9), rec("red shiny", 0.9), rec(words(15), 0.9),
                                             rec("blue square", 0.2), rec("green triangle #", 0.7)};
        for (const auto& r : records) {
            const bool forward = filter_text_length(r) && filter_content(r, nouns) && filter_similarity(r);
            const bool reverse = filter_similarity(r) && filter_content(r, nouns) && filter_text_length(r);
            CHECK(forward == reverse);
            CHECK(passes_all_filters(r, nouns) == forward);
        }
    }

    TEST_CASE("toy similarity") {
        CHECK(toy_overlap_similarity("red circle", "red circle") == 1.0);
        CHECK(toy_overlap_similarity("red circle", "blue square") == 0.0);
        CHECK(toy_overlap_similarity("red red", "red circle topleft") == doctest::Approx(1.0 / 3.0));
    }

    TEST_CASE("manifest and image files") {
        auto dir = scratch_dir("data_io");
        std::vector<CorpusRecord> records = {{"red circle topleft", "a.ppm", std::nullopt}, {"blue square topright", "b.ppm", 0.75}};
        write_manifest(dir / "m.tsv", records);
        auto back = read_manifest(dir / "m.tsv");
        REQUIRE(back.size() == 2);
        CHECK(back[0].text == records[0].text);
        CHECK(back[0].image_ref == "a.ppm");
        CHECK_FALSE(back[0].similarity.has_value());
        CHECK(*back[1].similarity == 0.75);

        auto img = render(random_scene(4, 2), 32);
        write_ppm(dir / "a.ppm", img);
        auto back_img = read_ppm(dir / "a.ppm");
        REQUIRE(back_img.pixels.size() == img.pixels.size());
        for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(back_img.pixels[i] - img.pixels[i]) <= 0.5 / 255.0);
        Image odd{1, 2, {0.1, 0.2, 0.3, 0.123456789, 1.0, 0.0}};
        write_raw(dir / "a.f64", odd);
        CHECK(read_raw(dir / "a.f64") == odd);
        std::filesystem::remove_all(dir);
    }
}
