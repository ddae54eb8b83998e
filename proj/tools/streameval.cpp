// streameval: run streaming protocols over annotated suites and score them.

#include <iostream>

#include "CLI11.hpp"
#include "streameval/streameval.hpp"

int main(int argc, char** argv) {
  namespace se = streameval;
  CLI::App app{"Streaming video evaluation harness"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Print extra diagnostics");

  auto* run = app.add_subcommand("run", "Run a suite and write response logs");
  std::string manifest;
  se::RunOverrides ov;
  std::string out, protocol, policy, clock, backend;
  std::size_t context_size = 0, buffer_size = 0;
  double fps = 0.0;
  run->add_option("--manifest", manifest, "Suite manifest (JSON)")->required();
  auto* o_out = run->add_option("--out", out, "Output directory for logs");
  auto* o_proto = run->add_option("--protocol", protocol, "sync | async");
  auto* o_pol = run->add_option("--policy", policy, "sw | u | sw+u");
  auto* o_k = run->add_option("--context-size", context_size, "Frames per inference");
  auto* o_b = run->add_option("--camera-buffer-size", buffer_size, "Camera buffer capacity");
  auto* o_fps = run->add_option("--camera-fps", fps, "Camera frame rate");
  auto* o_clk = run->add_option("--clock", clock, "wall | virtual");
  auto* o_be = run->add_option("--backend", backend, "echo[:L] | mock:<path> | remote:<config>");

  auto* score = app.add_subcommand("score", "Score response logs against annotations");
  se::ScoreArgs sargs;
  std::string logs_dir, score_out;
  std::vector<std::string> annotations;
  score->add_option("--logs", logs_dir, "Directory of *.responses.json")->required();
  score->add_option("--annotations", annotations, "Annotation file(s)")->required();
  score->add_option("--judge", sargs.judge, "oracle | remote:<config>");
  score->add_option("--weighting", sargs.weighting,
                    "uniform | inverse_category | inverse_task | inverse_both");
  score->add_option("--consistency-denominator", sargs.denominator, "as_paper | n_minus_1");
  auto* o_sout = score->add_option("--out", score_out, "Report directory (default: logs dir)");

  auto* fixtures = app.add_subcommand("fixtures", "Write a synthetic fixture suite");
  std::string kind, fix_out;
  bool force = false;
  fixtures->add_option("kind", kind, "smoke | tradeoff | buffer-drop")->required();
  fixtures->add_option("--out", fix_out, "Target directory")->required();
  fixtures->add_flag("--force", force, "Overwrite a non-empty directory");

  auto* validate = app.add_subcommand("validate", "Check annotation or response log files");
  std::vector<std::string> files;
  validate->add_option("files", files, "Files to check")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (*o_out) ov.out = out;
      if (*o_proto) ov.protocol = protocol;
      if (*o_pol) ov.policy = policy;
      if (*o_k) ov.context_size = context_size;
      if (*o_b) ov.camera_buffer_size = buffer_size;
      if (*o_fps) ov.camera_fps = fps;
      if (*o_clk) ov.clock = clock;
      if (*o_be) ov.backend = backend;
      if (verbose) std::cerr << "overrides: " << ov.to_json().dump() << "\n";
      return se::cmd_run(manifest, ov, std::cout, std::cerr);
    }
    if (score->parsed()) {
      sargs.logs_dir = logs_dir;
      for (const auto& a : annotations) sargs.annotations.emplace_back(a);
      if (*o_sout) sargs.out_dir = score_out;
      return se::cmd_score(sargs, std::cout, std::cerr);
    }
    if (fixtures->parsed()) return se::cmd_fixtures(kind, fix_out, force, std::cout, std::cerr);
    if (validate->parsed()) {
      std::vector<se::fs::path> paths(files.begin(), files.end());
      return se::cmd_validate(paths, std::cout, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
