#pragma once

#include <optional>
#include <string>
#include <vector>

#include "harness/config.hpp"

namespace fge {

// Percent change of accuracy relative to the clean baseline; empty when the
// baseline is zero.
std::optional<double> r_delta(double acc_adv, double acc_clean);

// One run directory. Stages read their inputs from disk and write their
// outputs to disk, so any stage can also run alone from the CLI against an
// existing directory. Every file the pipeline opens for reading is recorded,
// and a stage can declare forbidden path substrings; the attack stage uses
// that to make the detector checkpoints unreachable.
class RunContext {
 public:
  RunContext(RunConfig cfg, std::string out_dir);

  const RunConfig& cfg() const { return cfg_; }
  const std::string& out() const { return out_dir_; }
  std::string path(const std::string& rel) const { return out_dir_ + "/" + rel; }

  // read-audit hooks
  void note_read(const std::string& path);
  void begin_stage(const std::string& name,
                   std::vector<std::string> forbidden = {});
  void end_stage();  // appends {name, seconds, reads} to the manifest

  const std::vector<std::string>& current_reads() const { return reads_; }

 private:
  void write_manifest_skeleton();
  RunConfig cfg_;
  std::string out_dir_;
  std::string stage_;
  std::vector<std::string> forbidden_;
  std::vector<std::string> reads_;
  double stage_start_ = 0.0;
};

void stage_gen_data(RunContext& ctx);
void stage_train_backbone(RunContext& ctx);
void stage_train_detectors(RunContext& ctx);
void stage_attack(RunContext& ctx);
void stage_evaluate(RunContext& ctx);
void stage_ablate(RunContext& ctx, const std::string& axis);
void stage_robustness(RunContext& ctx);
void stage_export_features(RunContext& ctx);

// All stages in order: gen-data, train-backbone, train-detectors, attack,
// evaluate, ablate (both axes), robustness, export-features. Failures are
// rethrown as StageFailure naming the stage.
void run_pipeline(RunContext& ctx);

}  // namespace fge
