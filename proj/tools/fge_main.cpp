// Command-line front end. Everything goes through the C API in fge.h; the
// C++ internals stay behind the shared library boundary.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fge.h"

namespace {

struct Common {
  std::string out, config, seed, epsilon, alpha, steps;
  std::string granularity, anchor_source, prompts;
  bool clamp_each_step = false;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  auto* out = cmd->add_option("--out", c.out, "run directory");
  if (out_required) out->required();
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--epsilon", c.epsilon, "perturbation budget, e.g. 8/255");
  cmd->add_option("--alpha", c.alpha, "attack step size, e.g. 2/255");
  cmd->add_option("--steps", c.steps, "attack iterations");
  cmd->add_option("--granularity", c.granularity, "fine | coarse | untargeted");
  cmd->add_option("--anchor-source", c.anchor_source, "matched | global | local");
  cmd->add_option("--prompts", c.prompts, "prompt override JSON file");
  cmd->add_flag("--clamp-each-step", c.clamp_each_step,
                "clamp pixels into [0,1] after every attack step");
}

int g_status = 0;

class Run {
 public:
  explicit Run(const Common& c) {
    fge_code rc = fge_run_open(
        c.out.c_str(), c.config.empty() ? nullptr : c.config.c_str(), &run_);
    if (rc != FGE_OK) {
      report(rc);
      return;
    }
    apply("seed", c.seed);
    apply("epsilon", c.epsilon);
    apply("alpha", c.alpha);
    apply("steps", c.steps);
    apply("granularity", c.granularity);
    apply("anchor_source", c.anchor_source);
    apply("prompts", c.prompts);
    if (c.clamp_each_step) apply("clamp_each_step", "true");
  }
  ~Run() { fge_run_close(run_); }

  bool ok() const { return g_status == 0 && run_; }
  fge_run* get() { return run_; }

  void stage(const char* name) {
    if (!ok()) return;
    std::printf("[%s]\n", name);
    std::fflush(stdout);
    const fge_code rc = fge_run_stage(run_, name);
    if (rc != FGE_OK) report(rc);
  }

  void report(fge_code rc) {
    std::fprintf(stderr, "error: %s\n", fge_last_error());
    if (g_status == 0) g_status = static_cast<int>(rc);
  }

 private:
  void apply(const char* key, const std::string& value) {
    if (!ok() || value.empty()) return;
    const fge_code rc = fge_run_set(run_, key, value.c_str());
    if (rc != FGE_OK) report(rc);
  }

  fge_run* run_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anti-forensic perturbation workbench"};
  app.set_version_flag("--version", std::string(fge_version()));
  app.require_subcommand(1);

  const struct {
    const char* cmd;
    const char* stage;
    const char* help;
  } plain[] = {
      {"gen-data", "gen-data", "synthesize the train/test/attack corpora"},
      {"train-backbone", "train-backbone",
       "contrastive training of the image/text encoder"},
      {"train-detectors", "train-detectors",
       "fit the linear and mlp2 forgery heads"},
      {"attack", "attack", "perturb the attack split under the config budget"},
      {"evaluate", "evaluate", "accuracy cells, budget audit, migration stats"},
      {"robustness", "robustness",
       "re-score adversarial images after blur and jpeg proxies"},
      {"export-features", "export-features",
       "2d feature projection of clean and adversarial embeddings"},
  };
  for (const auto& p : plain) {
    auto c = std::make_shared<Common>();
    CLI::App* cmd = app.add_subcommand(p.cmd, p.help);
    add_common(cmd, *c);
    cmd->callback([c, stage = p.stage] {
      Run run(*c);
      run.stage(stage);
    });
  }

  {
    auto c = std::make_shared<Common>();
    auto axis = std::make_shared<std::string>();
    CLI::App* cmd = app.add_subcommand("ablate", "anchor ablation sweeps");
    add_common(cmd, *c);
    cmd->add_option("--axis", *axis, "granularity | source_match")->required();
    cmd->callback([c, axis] {
      Run run(*c);
      if (*axis == "granularity")
        run.stage("ablate-granularity");
      else if (*axis == "source_match")
        run.stage("ablate-source-match");
      else {
        std::fprintf(stderr, "error: unknown ablation axis \"%s\"\n",
                     axis->c_str());
        g_status = static_cast<int>(FGE_E_INVALID_ARG);
      }
    });
  }

  {
    auto c = std::make_shared<Common>();
    CLI::App* cmd =
        app.add_subcommand("pipeline", "every stage in order, one run directory");
    add_common(cmd, *c);
    cmd->callback([c] {
      Run run(*c);
      if (!run.ok()) return;
      const fge_code rc = fge_run_pipeline(run.get());
      if (rc != FGE_OK) run.report(rc);
    });
  }

  {
    auto c = std::make_shared<Common>();
    CLI::App* cmd = app.add_subcommand(
        "config", "print the effective configuration as JSON");
    add_common(cmd, *c, false);
    cmd->callback([c] {
      if (c->out.empty()) c->out = ".";
      Run run(*c);
      if (!run.ok()) return;
      char* text = nullptr;
      const fge_code rc = fge_run_config_json(run.get(), &text);
      if (rc != FGE_OK) {
        run.report(rc);
        return;
      }
      std::printf("%s\n", text);
      fge_string_free(text);
    });
  }

  CLI11_PARSE(app, argc, argv);
  return g_status;
}
