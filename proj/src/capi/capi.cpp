#include "fge.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "common/error.hpp"
#include "harness/config.hpp"
#include "harness/pipeline.hpp"
#include "json.hpp"

namespace {

thread_local std::string g_last_error;

fge_code code_of(fge::ErrorCode c) {
  return static_cast<fge_code>(static_cast<int>(c));
}

template <typename Fn>
fge_code guarded(Fn&& fn) {
  try {
    fn();
    return FGE_OK;
  } catch (const fge::Error& e) {
    g_last_error = e.what();
    return code_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FGE_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return FGE_E_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

// The context is rebuilt lazily so config overrides can land between open
// and the first stage.
struct fge_run {
  fge::RunConfig cfg;
  std::string out_dir;
  std::unique_ptr<fge::RunContext> ctx;

  fge::RunContext& context() {
    if (!ctx) ctx = std::make_unique<fge::RunContext>(cfg, out_dir);
    return *ctx;
  }
};

extern "C" {

const char* fge_version(void) { return "0.3.0"; }

fge_code fge_run_open(const char* out_dir, const char* config_path,
                      fge_run** out) {
  if (!out_dir || !out) {
    g_last_error = "fge_run_open: null argument";
    return FGE_E_INVALID_ARG;
  }
  *out = nullptr;
  return guarded([&] {
    auto run = std::make_unique<fge_run>();
    run->out_dir = out_dir;
    if (config_path) run->cfg = fge::load_config(config_path);
    *out = run.release();
  });
}

void fge_run_close(fge_run* run) { delete run; }

fge_code fge_run_set(fge_run* run, const char* key, const char* value) {
  if (!run || !key || !value) {
    g_last_error = "fge_run_set: null argument";
    return FGE_E_INVALID_ARG;
  }
  return guarded([&] {
    // Bare words become JSON strings; everything that already parses as
    // JSON (numbers, arrays, booleans) passes through unchanged.
    nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
    if (v.is_discarded()) v = std::string(value);
    nlohmann::json patch{{key, v}};
    run->cfg = fge::parse_config_text(patch.dump(), run->cfg);
    run->ctx.reset();
  });
}

fge_code fge_run_config_json(fge_run* run, char** out) {
  if (!run || !out) {
    g_last_error = "fge_run_config_json: null argument";
    return FGE_E_INVALID_ARG;
  }
  *out = nullptr;
  return guarded([&] {
    *out = dup_string(fge::config_to_json(run->cfg));
    if (!*out) fge::raise(fge::ErrorCode::Internal, "out of memory");
  });
}

fge_code fge_run_stage(fge_run* run, const char* stage) {
  if (!run || !stage) {
    g_last_error = "fge_run_stage: null argument";
    return FGE_E_INVALID_ARG;
  }
  const std::string name = stage;
  return guarded([&] {
    fge::RunContext& ctx = run->context();
    if (name == "gen-data")
      fge::stage_gen_data(ctx);
    else if (name == "train-backbone")
      fge::stage_train_backbone(ctx);
    else if (name == "train-detectors")
      fge::stage_train_detectors(ctx);
    else if (name == "attack")
      fge::stage_attack(ctx);
    else if (name == "evaluate")
      fge::stage_evaluate(ctx);
    else if (name == "ablate-granularity")
      fge::stage_ablate(ctx, "granularity");
    else if (name == "ablate-source-match")
      fge::stage_ablate(ctx, "source_match");
    else if (name == "robustness")
      fge::stage_robustness(ctx);
    else if (name == "export-features")
      fge::stage_export_features(ctx);
    else
      fge::raise(fge::ErrorCode::InvalidArg,
                 "unknown stage \"" + name + "\"");
  });
}

fge_code fge_run_pipeline(fge_run* run) {
  if (!run) {
    g_last_error = "fge_run_pipeline: null argument";
    return FGE_E_INVALID_ARG;
  }
  return guarded([&] { fge::run_pipeline(run->context()); });
}

const char* fge_last_error(void) { return g_last_error.c_str(); }

void fge_string_free(char* s) { std::free(s); }

}  // extern "C"
