#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "evlg/checkpoint.hpp"
#include "evlg/config.hpp"
#include "evlg/model.hpp"
#include "evlg/quantizer.hpp"
#include "evlg/t2i.hpp"

namespace evlg {

// A corpus read back from a manifest: records plus their decoded images.
struct LoadedCorpus {
    std::vector<CorpusRecord> records;
    std::vector<Image> images;
};

// Images are resolved relative to the manifest's directory.
LoadedCorpus load_corpus(const std::filesystem::path& manifest);

// Writes images/<index>.ppm and manifest.tsv under `dir`.
void write_corpus(const std::filesystem::path& dir, const std::vector<Pair>& pairs);

// Sections: config, quantizer, codebook and (when given) optimizer.
Checkpoint quantizer_checkpoint(const RunConfig& config, const Quantizer& quantizer, const Adam* optimizer = nullptr,
                                std::uint64_t step = 0);
// Rebuilds the quantizer described by the checkpoint's config section.
Quantizer restore_quantizer(const Checkpoint& checkpoint, const RunConfig& config);

RunConfig checkpoint_config(const Checkpoint& checkpoint);

struct ModelState {
    RunConfig config;
    Quantizer quantizer;
    Model model;
    std::unique_ptr<EndToEndReconstructor> reconstructor;  // end-to-end runs only
    ParameterList optimizer_state;                         // empty for inference-only checkpoints
    std::uint64_t step = 0;
};

// Sections: config, quantizer, codebook, transformer, hidden_to_code (end to
// end only), optimizer (empty when `optimizer` is null) and trainer.
Checkpoint model_checkpoint(const RunConfig& config, const Quantizer& quantizer, const Model& model,
                            const EndToEndReconstructor* reconstructor, const Adam* optimizer, std::uint64_t step);
ModelState restore_model(const Checkpoint& checkpoint);

// Token pairs (caption tokens, quantized image) for a corpus.
std::vector<TokenPair> token_pairs(const Quantizer& quantizer, const std::vector<CorpusRecord>& records,
                                   const std::vector<Image>& images, const Vocabulary& vocab);

// End-to-end reconstruction objective for Trainer, one term per pair.
AuxiliaryObjective reconstruction_objective(const Model& model, const EndToEndReconstructor& reconstructor,
                                            const Quantizer& quantizer, const std::vector<T2IExample>& examples,
                                            double weight, bool normalize);

}  // namespace evlg
