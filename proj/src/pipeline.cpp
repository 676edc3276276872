#include "evlg/pipeline.hpp"

#include <filesystem>
#include <iomanip>
#include <sstream>

#include "evlg/errors.hpp"

namespace evlg {

LoadedCorpus load_corpus(const std::filesystem::path& manifest) {
    LoadedCorpus out;
    out.records = read_manifest(manifest);
    const auto base = manifest.parent_path();
    for (const auto& r : out.records) {
        const std::filesystem::path p = base / r.image_ref;
        out.images.push_back(p.extension() == ".raw" ? read_raw(p) : read_ppm(p));
    }
    return out;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<Pair>& pairs) {
    std::filesystem::create_directories(dir / "images");
    std::vector<CorpusRecord> records;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::ostringstream name;
        name << "images/" << std::setw(5) << std::setfill('0') << i << ".ppm";
        write_ppm(dir / name.str(), pairs[i].image);
        records.push_back({pairs[i].caption, name.str(), std::nullopt});
    }
    write_manifest(dir / "manifest.tsv", records);
}

Checkpoint quantizer_checkpoint(const RunConfig& config, const Quantizer& quantizer, const Adam* optimizer,
                                std::uint64_t step) {
    Checkpoint cp;
    cp.set(text_section("config", to_config_text(config)));
    cp.set(tensor_section("quantizer", quantizer.network_parameters()));
    cp.set(tensor_section("codebook", {{"codebook", quantizer.codebook()}}));
    if (optimizer) {
        cp.set(tensor_section("optimizer", optimizer->state()));
        cp.set(tensor_section("trainer", {{"step", Tensor::from_data({1}, {static_cast<double>(step)})}}));
    }
    return cp;
}

RunConfig checkpoint_config(const Checkpoint& checkpoint) {
    const auto& s = checkpoint.section("config");
    if (!s.is_text) throw CheckpointError("config section must hold text");
    try {
        return parse_config(s.text, "checkpoint config");
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("stored config is invalid: ") + e.what());
    }
}

Quantizer restore_quantizer(const Checkpoint& checkpoint, const RunConfig& config) {
    Quantizer q(config.quantizer, config.seed);
    restore_section(checkpoint.section("quantizer"), q.network_parameters());
    restore_section(checkpoint.section("codebook"), {{"codebook", q.codebook()}});
    return q;
}

Checkpoint model_checkpoint(const RunConfig& config, const Quantizer& quantizer, const Model& model,
                            const EndToEndReconstructor* reconstructor, const Adam* optimizer, std::uint64_t step) {
    Checkpoint cp = quantizer_checkpoint(config, quantizer);
    cp.set(tensor_section("transformer", model.parameters()));
    if (reconstructor) cp.set(tensor_section("hidden_to_code", reconstructor->parameters()));
    cp.set(tensor_section("optimizer", optimizer ? optimizer->state() : ParameterList{}));
    cp.set(tensor_section("trainer", {{"step", Tensor::from_data({1}, {static_cast<double>(step)})}}));
    return cp;
}

ModelState restore_model(const Checkpoint& checkpoint) {
    ModelState s;
    s.config = checkpoint_config(checkpoint);
    s.quantizer = restore_quantizer(checkpoint, s.config);
    s.model = Model(s.config.model, s.config.seed);
    restore_section(checkpoint.section("transformer"), s.model.parameters());
    if (checkpoint.has("hidden_to_code")) {
        s.reconstructor = std::make_unique<EndToEndReconstructor>(s.quantizer, s.config.model.d_model,
                                                                  derive_seed(s.config.seed, 1));
        restore_section(checkpoint.section("hidden_to_code"), s.reconstructor->parameters());
    }
    if (checkpoint.has("optimizer")) s.optimizer_state = section_tensors(checkpoint.section("optimizer"));
    if (checkpoint.has("trainer")) {
        const auto& t = checkpoint.section("trainer");
        if (t.tensors.size() != 1 || t.tensors[0].data.size() != 1) throw CheckpointError("malformed trainer section");
        s.step = static_cast<std::uint64_t>(t.tensors[0].data[0]);
    }
    return s;
}

std::vector<TokenPair> token_pairs(const Quantizer& quantizer, const std::vector<CorpusRecord>& records,
                                   const std::vector<Image>& images, const Vocabulary& vocab) {
    if (records.size() != images.size()) throw ContractError("one image per record expected");
    const auto tokens = quantizer.tokenize(stack_images(images));
    std::vector<TokenPair> out;
    for (std::size_t i = 0; i < records.size(); ++i) out.push_back({vocab.caption_tokens(records[i].text), tokens[i]});
    return out;
}

AuxiliaryObjective reconstruction_objective(const Model& model, const EndToEndReconstructor& reconstructor,
                                            const Quantizer& quantizer, const std::vector<T2IExample>& examples,
                                            double weight, bool normalize) {
    return {reconstructor.parameters(), [&model, &reconstructor, &quantizer, &examples, weight, normalize](std::size_t i) {
                auto l = end_to_end_forward(model, reconstructor, quantizer, examples.at(i), T2IMode::EndToEnd, weight,
                                            normalize);
                return scale(l.rec_loss, weight);
            }};
}

}  // namespace evlg
