#pragma once
// Training, evaluation and inspection runs over files in a run directory.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qeot/config.hpp"
#include "qeot/data.hpp"
#include "qeot/evaluation.hpp"
#include "qeot/loss.hpp"
#include "qeot/model.hpp"

namespace qeot {

// Sample indices of training step `step` (0-based): each epoch is a
// Fisher-Yates permutation seeded by (seed, epoch), consumed in order and
// wrapping into the next epoch. A pure function of its arguments, which is
// what makes --resume reproduce an uninterrupted run.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t dataset_size, std::size_t batch,
                                       std::size_t step);

struct TrainLogLine {
  std::size_t step = 0;  // 1-based
  StepResult result;
  double lr = 0.0;

  std::string to_json() const;
};

struct TrainOutcome {
  std::size_t steps_done = 0;
  std::optional<StepResult> last;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
};

// Checkpoint = model parameters + optimizer state.
void save_training_checkpoint(const std::filesystem::path& path, const Model& model, const AdamW& optimizer);
// Restores parameters and, when present, optimizer state. Returns the step
// count stored with the optimizer (0 for a parameters-only file).
std::size_t load_training_checkpoint(const std::filesystem::path& path, Model& model, AdamW* optimizer);

struct TrainHooks {
  // Called after every step with the log line.
  std::function<void(const TrainLogLine&)> on_step;
};

// Trains on `train` for config.steps total steps, writing into out_dir:
//   train_log.jsonl, checkpoint.bin (final), checkpoint-<step>.bin (every
//   checkpoint_every steps) and config.txt. With `resume`, training
//   continues from that checkpoint's step and the log keeps its earlier
//   lines. A non-finite loss or gradient throws NumericError naming the step.
TrainOutcome train(const RunConfig& config, const std::vector<Sample>& train,
                   const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume,
                   const TrainHooks& hooks = {});

// Loads a checkpoint into a fresh model built from config.
Model load_model(const RunConfig& config, const std::filesystem::path& checkpoint);

struct InspectFiles {
  std::vector<std::filesystem::path> written;
};

// CSV dumps for one sample: selective attention both ways (L x L), the
// cross-similarity reading of image-to-text attention (L x L), decoder
// cross-attention averaged over heads per layer (Q x L), and per-token
// gate means. Throws DataError if `id` is not in `samples`.
InspectFiles inspect(const Model& model, const std::vector<Sample>& samples, const std::string& id,
                     const std::filesystem::path& out_dir);

// Last-layer decoder cross-attention for sample b, averaged over heads:
// Q x L row-major.
std::vector<double> decoder_cross_attention(const BatchOutput& out, std::size_t b);

}  // namespace qeot
