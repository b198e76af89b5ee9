#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "malvis/dataset.hpp"
#include "malvis/model.hpp"

namespace malvis {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 7;      // batch shuffling; epoch e uses mix_seed(seed, e)
  std::size_t patience = 0;    // stop after this many epochs without val improvement; 0 = off
  double aux_weight = 0.3;     // auxiliary-classifier gradient weight (tiny_inception)
};

struct EpochStats {
  double train_loss;      // mean per-sample loss, aux term included
  double train_accuracy;
  double val_accuracy;
};

using TrainHistory = std::vector<EpochStats>;

// SGD with momentum over epochs x batches; input geometry comes from
// model.spec(). The model is left holding the parameters of the epoch with
// the best validation accuracy (earliest on ties). Fully deterministic given
// (model seed, split, config).
// Throws errc::diverged_loss with the epoch/batch location when the loss
// stops being finite.
TrainHistory train(Model& model, const CorpusIndex& train_split, const CorpusIndex& val_split,
                   const TrainConfig& config, std::ostream* progress = nullptr);

// Confusion matrix with rows = true family, cols = predicted.
struct EvalReport {
  std::string model_id;
  std::string split_id;
  std::vector<std::string> families;
  std::vector<std::vector<std::size_t>> confusion;

  std::size_t total() const;
  double overall_accuracy() const;                 // trace / total
  std::vector<double> per_family_accuracy() const; // per-class recall: diag / row sum
  double macro_average() const;                    // unweighted mean of per-family recall
};

// Argmax over scores, ties toward the lowest class id. Idempotent on a frozen
// model.
EvalReport evaluate(Model& model, const CorpusIndex& split, const std::string& model_id,
                    const std::string& split_id, std::size_t batch_size = 64);

struct ComparisonRow {
  std::string model_id;
  double accuracy;
};

// Rows sorted ascending by accuracy; equal accuracies keep input order.
std::vector<ComparisonRow> compare_models(const std::vector<EvalReport>& reports);

enum class ReportFormat { csv, markdown };

// 0.9924 -> "99.24%"
std::string format_percent(double value);

// CSV: header "family,accuracy", one row per family in index order, final
// "OVERALL,<v>" row; markdown is the equivalent pipe table. Accuracies are
// rendered as percentages with two decimals.
std::string render_report(const EvalReport& report, ReportFormat format);
std::string render_comparison(std::span<const ComparisonRow> rows, ReportFormat format);

// "epoch,train_loss,train_acc,val_acc" per-epoch log, epochs numbered from 1.
std::string render_history_csv(const TrainHistory& history);

// Write either rendering to a file; returns bytes written.
// Throws errc::io_failure (including for an empty destination path).
std::size_t emit_report(const EvalReport& report, ReportFormat format,
                        const std::filesystem::path& destination);
std::size_t emit_comparison(std::span<const ComparisonRow> rows, ReportFormat format,
                            const std::filesystem::path& destination);

}  // namespace malvis
