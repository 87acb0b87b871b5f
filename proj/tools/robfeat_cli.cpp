// Copyright 2026 The robfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "robfeat/robfeat.h"

namespace {

struct Args {
  std::string config;
  std::string out = ".";
  uint64_t seed = 0;
  unsigned threads = 0;
};

void add_common(CLI::App* sub, Args& a, CLI::Option*& seed_opt) {
  sub->add_option("--config", a.config, "JSON config file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "output directory");
  seed_opt = sub->add_option("--seed", a.seed, "override the config seed");
  sub->add_option("--threads", a.threads, "worker threads (0 = hardware)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust and non-robust feature experiments"};
  app.set_version_flag("--version", std::string(rf_version()));
  app.require_subcommand(1);

  Args args;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"theory", "robust Gaussian theory sweep and checks"},
      {"pipeline", "end-to-end synthetic and digits experiments"},
      {"gen-data", "generate or import a dataset"},
      {"train", "train a model (standard or adversarial)"},
      {"attack", "run l2 PGD over a dataset"},
      {"distill", "build a robust or non-robust dataset"},
      {"transfer", "measure attack transfer between models"},
      {"eval", "evaluate accuracy and robust accuracy"},
  };
  std::vector<std::pair<CLI::App*, CLI::Option*>> handles;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    CLI::Option* seed_opt = nullptr;
    add_common(sub, args, seed_opt);
    handles.emplace_back(sub, seed_opt);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (const auto& [sub, seed_opt] : handles) {
    if (!sub->parsed()) continue;
    int exit_code = 0;
    const rf_status st = rf_run_command(sub->get_name().c_str(), args.config.c_str(),
                                        args.out.c_str(), seed_opt->count() > 0, args.seed,
                                        args.threads, &exit_code);
    if (st != RF_OK) {
      std::fprintf(stderr, "error [%s]: %s\n", rf_status_name(st), rf_last_error());
      return st == RF_ERR_CONFIG ? 2 : 3;
    }
    if (exit_code != 0) std::fprintf(stderr, "one or more checks failed; see the report\n");
    return exit_code;
  }
  return 2;
}
