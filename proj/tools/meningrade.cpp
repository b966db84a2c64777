#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "meningrade/commands.hpp"
#include "meningrade/eval.hpp"
#include "meningrade/server.hpp"
#include "meningrade/synth.hpp"

using namespace meningrade;

namespace {

ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

Config config_or_default(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meningioma grading pipeline, review service and tools"};
  app.require_subcommand(1);

  std::string manifest, bindings, out, config_path, session, pred, truth, host = "127.0.0.1";
  int workers = 1, port = 8080;
  std::uint64_t seed = 42;
  SynthParams sp;
  std::string params_path;

  auto* process = app.add_subcommand("process", "run detectors, aggregation and grading on a case");
  process->add_option("--manifest", manifest, "case manifest JSON")->required()->check(CLI::ExistingFile);
  process->add_option("--bindings", bindings, "detector bindings JSON")->required()->check(CLI::ExistingFile);
  process->add_option("--out", out, "output directory")->required();
  process->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  process->add_option("--config", config_path, "config JSON")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "generate a synthetic case");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--config", params_path, "generator parameters JSON")->check(CLI::ExistingFile);
  synth->add_option("--case-id", sp.case_id, "case id");
  synth->add_option("--node-size", sp.node_size, "tissue node side in px (multiple of 512)");
  synth->add_option("--slide-size", sp.slide_size, "slide side in px (default node + margins)");
  synth->add_option("--mitoses", sp.mitoses, "mitoses planted in one HPF");
  synth->add_option("--nuclei", sp.nuclei_per_patch, "nuclei per 512 px patch");
  synth->add_option("--small-cell", sp.small_cell_patches, "patches with small-cell density");
  synth->add_option("--small-cell-nuclei", sp.small_cell_nuclei, "nuclei in each small-cell patch");
  synth->add_option("--brain-columns", sp.brain_columns, "patch columns with brain-like density");
  synth->add_option("--necrosis", sp.necrosis, "necrotic regions");
  synth->add_option("--sheeting", sp.sheeting, "sheeting regions");
  synth->add_option("--nucleoli", sp.nucleoli, "prominent nucleoli");
  synth->add_flag("--ki67", sp.ki67, "add a paired Ki-67 slide");
  synth->add_option("--ki67-positive", sp.ki67_positive_fraction, "fraction of Ki-67 positive nuclei");

  auto* eval = app.add_subcommand("eval", "precision/recall sweep or nuclei counting error");
  eval->add_option("--pred", pred, "predictions JSONL (score or count per key)")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", truth, "truth JSONL (label or count per key)")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "write the report JSON here");

  auto* report = app.add_subcommand("report", "grading report of a processed case");
  report->add_option("--out", out, "processed case directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--session", session, "session id or session directory");

  auto* serve = app.add_subcommand("serve", "HTTP review service");
  serve->add_option("--out", out, "processed case directory, or a directory of them")->required()->check(
      CLI::ExistingDirectory);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*process) {
      const auto r = run_process(manifest, bindings, config_or_default(config_path), out, workers);
      std::cout << "case " << r.data.manifest.case_id << ": " << r.data.detections.size()
                << " detections, grade " << to_string(r.analysis.grade.grade) << "\n";
    } else if (*synth) {
      SynthParams p = sp;
      if (!params_path.empty()) {
        p = read_json_file(params_path).get<SynthParams>();
        // flags given on the command line win over the file
        for (const auto* opt : synth->get_options()) {
          if (opt->count() == 0) continue;
          const auto name = opt->get_name();
          if (name == "--case-id") p.case_id = sp.case_id;
          if (name == "--node-size") p.node_size = sp.node_size;
          if (name == "--slide-size") p.slide_size = sp.slide_size;
          if (name == "--mitoses") p.mitoses = sp.mitoses;
          if (name == "--nuclei") p.nuclei_per_patch = sp.nuclei_per_patch;
          if (name == "--small-cell") p.small_cell_patches = sp.small_cell_patches;
          if (name == "--small-cell-nuclei") p.small_cell_nuclei = sp.small_cell_nuclei;
          if (name == "--brain-columns") p.brain_columns = sp.brain_columns;
          if (name == "--necrosis") p.necrosis = sp.necrosis;
          if (name == "--sheeting") p.sheeting = sp.sheeting;
          if (name == "--nucleoli") p.nucleoli = sp.nucleoli;
          if (name == "--ki67") p.ki67 = sp.ki67;
          if (name == "--ki67-positive") p.ki67_positive_fraction = sp.ki67_positive_fraction;
        }
      }
      if (synth->get_option("--seed")->count() > 0 || params_path.empty()) p.seed = seed;
      const auto r = generate_case(p, out);
      std::cout << "wrote " << r.manifest.string() << " and " << r.bindings.string() << "\n";
    } else if (*eval) {
      const auto r = evaluate_files(pred, truth);
      const auto j = json(r);
      if (!out.empty()) write_text_file(out, j.dump(2) + "\n");
      if (r.counting_error_percent) {
        std::cout << "counting error: " << *r.counting_error_percent << "% over " << r.counted << " samples\n";
      } else {
        std::cout << "best F1 " << r.best_f1 << " at threshold " << r.best_threshold << " (" << r.curve.size()
                  << " thresholds)\n";
      }
    } else if (*report) {
      const auto r = run_report(out, session.empty() ? std::nullopt : std::optional<std::string>(session));
      std::cout << r.text;
    } else if (*serve) {
      SessionStore store(std::filesystem::path(out) / "sessions");
      store.add_cases_under(out);
      store.load_sessions();
      ApiServer server(store);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << store.case_ids().size() << " case(s) on http://" << host << ":" << port << std::endl;
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
