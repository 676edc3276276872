#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "evlg/checkpoint.hpp"
#include "evlg/config.hpp"
#include "evlg/errors.hpp"
#include "evlg/i2t.hpp"
#include "evlg/pipeline.hpp"

using namespace evlg;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

RunConfig resolve_config(const Options& o) {
    RunConfig c = o.config_path.empty() ? parse_config("") : load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    c.finalize();
    return c;
}

// Checkpoint config plus command-line overrides of seed and threads.
RunConfig with_overrides(RunConfig c, const Options& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    c.finalize();
    return c;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ContractError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot read " + path.string());
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

int cmd_gen_corpus(const Options& o, std::size_t count, const fs::path& out) {
    RunConfig c = resolve_config(o);
    if (count == 0) count = c.corpus_count;
    ensure_dir(out);
    write_corpus(out, generate_corpus(count, c.seed, c.corpus));
    std::cout << "wrote " << count << " pairs to " << (out / "manifest.tsv").string() << '\n';
    return 0;
}

int cmd_train_vq(const Options& o, const fs::path& manifest, const fs::path& out) {
    RunConfig c = resolve_config(o);
    const auto corpus = load_corpus(manifest);
    Quantizer q(c.quantizer, c.seed);
    VqTrainer trainer(q, c.train.adam);
    std::vector<std::size_t> idx(corpus.images.size());
    for (std::size_t s = 0; s < c.vq_steps; ++s) {
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(c.seed, s));
        rng.shuffle(idx.begin(), idx.end());
        std::vector<Image> batch;
        for (std::size_t i = 0; i < std::min(c.vq_batch_size, idx.size()); ++i) batch.push_back(corpus.images[idx[i]]);
        const auto st = trainer.step(stack_images(batch));
        if (c.log_every && ((s + 1) % c.log_every == 0 || s + 1 == c.vq_steps)) {
            std::cout << "step " << s + 1 << " loss " << st.loss << " pixel_mse " << st.pixel_mse << '\n';
        }
    }
    std::vector<VisualTokens> tokens = q.tokenize(stack_images(corpus.images));
    std::cout << "dead_code_fraction " << dead_code_fraction(tokens, c.quantizer.codebook_size) << '\n';
    ensure_dir(out);
    save_checkpoint(out / "quantizer.ckpt", quantizer_checkpoint(c, q, &trainer.optimizer(), c.vq_steps));
    std::cout << "saved " << (out / "quantizer.ckpt").string() << '\n';
    return 0;
}

int cmd_train_model(const Options& o, const fs::path& manifest, const std::string& quantizer_path,
                    const std::string& resume_path, std::optional<std::size_t> steps, const fs::path& out) {
    RunConfig c;
    Quantizer q;
    std::unique_ptr<Model> model;
    std::unique_ptr<EndToEndReconstructor> recon;
    ParameterList optimizer_state;
    std::uint64_t start = 0;
    if (!resume_path.empty()) {
        ModelState s = restore_model(load_checkpoint(resume_path));
        c = with_overrides(s.config, o);
        q = s.quantizer;
        model = std::make_unique<Model>(std::move(s.model));
        recon = std::move(s.reconstructor);
        optimizer_state = std::move(s.optimizer_state);
        start = s.step;
    } else {
        if (quantizer_path.empty()) throw ConfigError("train-model needs --quantizer or --resume");
        c = resolve_config(o);
        const Checkpoint qc = load_checkpoint(quantizer_path);
        const RunConfig stored = checkpoint_config(qc);
        c.quantizer = stored.quantizer;
        c.corpus.image_side = stored.corpus.image_side;
        c.finalize();
        q = restore_quantizer(qc, c);
        model = std::make_unique<Model>(c.model, c.seed);
        if (c.t2i_mode == T2IMode::EndToEnd)
            recon = std::make_unique<EndToEndReconstructor>(q, c.model.d_model, derive_seed(c.seed, 1));
    }

    const auto corpus = load_corpus(manifest);
    const Vocabulary vocab;
    auto pairs = token_pairs(q, corpus.records, corpus.images, vocab);
    std::vector<T2IExample> examples;
    AuxiliaryObjective aux;
    if (recon) {
        for (std::size_t i = 0; i < pairs.size(); ++i)
            examples.push_back({pairs[i].text, pairs[i].image,
                                stack_images(std::span<const Image>(&corpus.images[i], 1))});
        aux = reconstruction_objective(*model, *recon, q, examples, c.rec_weight, c.train.normalize_loss);
    }
    Trainer trainer(*model, pairs, c.train, aux);
    if (!optimizer_state.empty()) trainer.optimizer().load_state(optimizer_state);
    trainer.set_step(start);
    const std::size_t total = steps.value_or(c.train_steps);
    for (std::size_t s = 0; s < total; ++s) {
        const auto st = trainer.train_step();
        if (c.log_every && (st.step % c.log_every == 0 || s + 1 == total)) std::cout << format_log_line(st) << '\n';
    }
    ensure_dir(out);
    save_checkpoint(out / "model.ckpt", model_checkpoint(c, q, *model, recon.get(), &trainer.optimizer(), trainer.step()));
    std::cout << "saved " << (out / "model.ckpt").string() << " at step " << trainer.step() << '\n';
    return 0;
}

int cmd_compare(const Options& o, const fs::path& out) {
    RunConfig c = resolve_config(o);
    ensure_dir(out);
    const auto report = compare_modes(c.compare, nullptr, &std::cerr);
    std::ofstream table(out / "compare.txt"), tsv(out / "compare.tsv");
    write_compare_table(table, report);
    write_compare_tsv(tsv, report);
    write_compare_table(std::cout, report);
    return 0;
}

int cmd_generate(const Options& o, const fs::path& checkpoint, const std::string& text,
                 std::optional<std::size_t> candidates, const fs::path& out) {
    ModelState s = restore_model(load_checkpoint(checkpoint));
    RunConfig c = with_overrides(s.config, o);
    SamplerConfig sampler = c.sampler;
    if (candidates) sampler.num_candidates = *candidates;
    const Vocabulary vocab;
    const auto tokens = vocab.caption_tokens(text);
    if (tokens.size() > c.model.max_text_length) {
        throw ContractError("caption of " + std::to_string(tokens.size()) + " tokens exceeds the text budget " +
                            std::to_string(c.model.max_text_length));
    }
    const auto z = sample_image_candidates(s.model, tokens, sampler, c.threads);
    const auto result = rerank_select(z, tokens, cycle_consistency_scorer(s.model));
    ensure_dir(out);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const Tensor pixels = s.reconstructor && c.t2i_mode == T2IMode::EndToEnd
                                  ? end_to_end_reconstruct(s.model, *s.reconstructor, s.quantizer, tokens, z[i])
                                  : reconstruct_from_gold(T2IMode::TwoStage, z[i], s.quantizer);
        const Image image = image_from_batch(pixels, 0);
        const std::string stem = "candidate_" + std::to_string(i);
        write_ppm(out / (stem + ".ppm"), image);
        write_raw(out / (stem + ".raw"), image);
        if (i == result.best) write_ppm(out / "selected.ppm", image);
    }
    std::ofstream scores(out / "scores.tsv");
    write_score_table(scores, result);
    std::cout << "selected candidate " << result.best << " of " << z.size() << '\n';
    return 0;
}

std::vector<Image> images_from(const std::string& manifest, const std::vector<std::string>& files) {
    std::vector<Image> images;
    if (!manifest.empty()) images = load_corpus(manifest).images;
    for (const auto& f : files) images.push_back(fs::path(f).extension() == ".raw" ? read_raw(f) : read_ppm(f));
    if (images.empty()) throw ContractError("no input images: pass --manifest or --image");
    return images;
}

int cmd_caption(const Options& o, const fs::path& checkpoint, const std::string& manifest,
                const std::vector<std::string>& files) {
    ModelState s = restore_model(load_checkpoint(checkpoint));
    with_overrides(s.config, o);
    const Vocabulary vocab;
    for (const auto& image : images_from(manifest, files))
        std::cout << vocab.decode(caption(s.model, s.quantizer, image)) << '\n';
    return 0;
}

int cmd_vqa(const Options& o, const fs::path& checkpoint, const std::string& manifest, std::optional<std::size_t> steps,
            const std::string& question, const std::vector<std::string>& files, const std::string& out) {
    ModelState s = restore_model(load_checkpoint(checkpoint));
    RunConfig c = with_overrides(s.config, o);
    const Vocabulary vocab;
    if (!question.empty()) {
        for (const auto& image : images_from("", files)) {
            const auto z = s.quantizer.tokenize(stack_images(std::span<const Image>(&image, 1)))[0];
            std::cout << vocab.decode(vqa_answer(s.model, z, vocab.encode(question))) << '\n';
        }
        return 0;
    }
    if (manifest.empty() || out.empty()) throw ConfigError("vqa needs --question with --image, or --manifest with --out");
    const auto corpus = load_corpus(manifest);
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        const auto scene = parse_caption(corpus.records[i].text);
        pairs.push_back({scene, corpus.images[i], corpus.records[i].text, vocab.caption_tokens(corpus.records[i].text)});
    }
    const auto tokens = s.quantizer.tokenize(stack_images(corpus.images));
    const auto items = make_vqa_items(pairs, vqa_examples(pairs), tokens, vocab);
    const std::size_t total = steps.value_or(c.vqa_steps);
    if (total > 0) {
        std::vector<TokenPair> captions;
        for (std::size_t i = 0; i < pairs.size(); ++i) captions.push_back({pairs[i].tokens, tokens[i]});
        VqaTrainer trainer(s.model, items, {c.train.adam, c.train.batch_size, c.seed, c.vqa_joint}, captions);
        for (std::size_t step = 0; step < total; ++step) {
            const double loss = trainer.train_step();
            if (c.log_every && ((step + 1) % c.log_every == 0 || step + 1 == total))
                std::cout << "step " << step + 1 << " loss " << loss << '\n';
        }
    }
    ensure_dir(out);
    std::ofstream dump(fs::path(out) / "vqa_eval.tsv");
    dump << "question\tprediction\tgold\texact_match\n";
    const auto eval = evaluate_vqa(s.model, items, vocab, &dump);
    std::cout << "exact_match " << eval.correct << " / " << eval.total << " = " << eval.accuracy() << '\n';
    if (total > 0) save_checkpoint(fs::path(out) / "model.ckpt", model_checkpoint(c, s.quantizer, s.model, s.reconstructor.get(), nullptr, s.step));
    return 0;
}

int cmd_filter(const Options& o, const fs::path& manifest, const std::string& reference, const fs::path& out) {
    RunConfig c = resolve_config(o);
    auto records = read_manifest(manifest);
    if (!reference.empty()) {
        const auto refs = read_manifest(reference);
        if (refs.size() != records.size()) throw ContractError("reference manifest must have one line per record");
        for (std::size_t i = 0; i < records.size(); ++i)
            if (!records[i].similarity) records[i].similarity = toy_overlap_similarity(records[i].text, refs[i].text);
    }
    const Vocabulary vocab;
    const auto nouns = vocab.nouns();
    std::vector<CorpusRecord> kept;
    std::size_t length_fail = 0, content_fail = 0, similarity_fail = 0;
    for (const auto& r : records) {
        const bool a = filter_text_length(r, c.filter_max_words), b = filter_content(r, nouns);
        const bool d = filter_similarity(r, c.filter_threshold);
        length_fail += !a;
        content_fail += !b;
        similarity_fail += !d;
        if (a && b && d) kept.push_back(r);
    }
    ensure_dir(out);
    write_manifest(out / "manifest.tsv", kept);
    std::cout << "kept " << kept.size() << " of " << records.size() << " (length " << length_fail << ", content "
              << content_fail << ", similarity " << similarity_fail << " rejected)\n";
    return 0;
}

int cmd_eval_bleu(const fs::path& candidates, const fs::path& references) {
    const auto cand_lines = read_lines(candidates), ref_lines = read_lines(references);
    if (cand_lines.size() != ref_lines.size()) throw ContractError("candidate and reference files differ in length");
    std::vector<std::vector<std::string>> cands;
    std::vector<std::vector<std::vector<std::string>>> refs;
    for (std::size_t i = 0; i < cand_lines.size(); ++i) {
        cands.push_back(split_words(cand_lines[i]));
        refs.emplace_back();
        std::istringstream in(ref_lines[i]);
        for (std::string r; std::getline(in, r, '\t');) refs.back().push_back(split_words(r));
    }
    std::cout << "bleu4 " << corpus_bleu4(cands, refs) << '\n';
    return 0;
}

int exit_code(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::Config: return 2;
        case ErrorCategory::Checkpoint: return 3;
        default: return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bidirectional image-text generation on a synthetic corpus"};
    app.require_subcommand(0, 1);
    app.fallthrough();
    Options o;
    bool version = false, print_config = false;
    app.add_flag("--version", version, "print artifact and checkpoint format versions");
    app.add_flag("--print-config", print_config, "print every config key with its default");
    app.add_option("--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "override the config seed");
    app.add_option("--threads", o.threads, "worker cap");

    std::size_t count = 0;
    std::string manifest, quantizer, resume, checkpoint, text, question, reference, out, candidates_file, references_file;
    std::vector<std::string> images;
    std::optional<std::size_t> steps, candidates;

    auto* gen = app.add_subcommand("gen-corpus", "write a synthetic manifest and images");
    gen->add_option("--count", count, "pairs (default corpus.count)");
    gen->add_option("--out", out, "output directory")->required();

    auto* vq = app.add_subcommand("train-vq", "train the image quantizer");
    vq->add_option("--manifest", manifest, "training manifest")->required();
    vq->add_option("--out", out, "output directory")->required();

    auto* tm = app.add_subcommand("train-model", "joint two-direction training");
    tm->add_option("--manifest", manifest, "training manifest")->required();
    tm->add_option("--quantizer", quantizer, "quantizer checkpoint");
    tm->add_option("--resume", resume, "model checkpoint to continue from");
    tm->add_option("--steps", steps, "steps to run (default train.steps)");
    tm->add_option("--out", out, "output directory")->required();

    auto* cmp = app.add_subcommand("compare-t2i", "two-stage vs end-to-end comparison");
    cmp->add_option("--out", out, "output directory")->required();

    auto* gn = app.add_subcommand("generate", "sample images for a caption and rerank them");
    gn->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    gn->add_option("--text", text, "caption")->required();
    gn->add_option("--candidates", candidates, "samples before reranking (default sampler.candidates)");
    gn->add_option("--out", out, "output directory")->required();

    auto* cp = app.add_subcommand("caption", "caption images, one line per image");
    cp->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cp->add_option("--manifest", manifest, "images from a manifest");
    cp->add_option("--image", images, "image files (.ppm or .raw)");

    auto* vqa = app.add_subcommand("vqa", "fine-tune and evaluate VQA, or answer one question");
    vqa->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    vqa->add_option("--manifest", manifest, "corpus to derive questions from");
    vqa->add_option("--steps", steps, "fine-tuning steps (default vqa.steps)");
    vqa->add_option("--question", question, "answer this question for each --image");
    vqa->add_option("--image", images, "image files");
    vqa->add_option("--out", out, "output directory for the eval dump and tuned checkpoint");

    auto* flt = app.add_subcommand("filter-corpus", "apply length, content and similarity filters");
    flt->add_option("--manifest", manifest, "input manifest")->required();
    flt->add_option("--reference", reference, "manifest of reference texts for the toy similarity scorer");
    flt->add_option("--out", out, "output directory")->required();

    auto* bleu = app.add_subcommand("eval-bleu", "corpus BLEU@4");
    bleu->add_option("--candidates", candidates_file, "one candidate per line")->required();
    bleu->add_option("--references", references_file, "tab-separated references per line")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: config: " << e.what() << '\n';
        return 2;
    }

    try {
        if (version) {
            std::cout << "evlg " << EVLG_VERSION << " (checkpoint format " << kCheckpointVersion << ")\n";
            return 0;
        }
        if (print_config) {
            for (const auto& k : config_keys()) std::cout << "# " << k.doc << '\n' << k.key << " = " << k.default_value << '\n';
            return 0;
        }
        if (*gen) return cmd_gen_corpus(o, count, out);
        if (*vq) return cmd_train_vq(o, manifest, out);
        if (*tm) return cmd_train_model(o, manifest, quantizer, resume, steps, out);
        if (*cmp) return cmd_compare(o, out);
        if (*gn) return cmd_generate(o, checkpoint, text, candidates, out);
        if (*cp) return cmd_caption(o, checkpoint, manifest, images);
        if (*vqa) return cmd_vqa(o, checkpoint, manifest, steps, question, images, out);
        if (*flt) return cmd_filter(o, manifest, reference, out);
        if (*bleu) return cmd_eval_bleu(candidates_file, references_file);
        std::cout << app.help();
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << category_name(e.category()) << ": " << e.what() << '\n';
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 4;
    }
}
