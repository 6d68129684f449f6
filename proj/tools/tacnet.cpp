#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tacnet/checkpoint.hpp"
#include "tacnet/config.hpp"
#include "tacnet/io.hpp"
#include "tacnet/pipeline.hpp"
#include "tacnet/synthdata.hpp"
#include "tacnet/train.hpp"

namespace fs = std::filesystem;
using namespace tacnet;

namespace {

config::KeyValues read_optional_config(const std::string& path) {
  if (path.empty()) return {};
  return io::read_key_values(path);
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = config::synth_config(read_optional_config(config_path));
  cfg.validate();
  const auto episodes = synth::generate_dataset(cfg);
  const auto digest = synth::write_dataset(cfg, episodes, out_dir);
  std::cout << digest << "\n";
  return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& config_path, const std::string& out_path,
              const std::string& mode, const std::string& log_path) {
  auto cfg = config::train_config(read_optional_config(config_path));
  if (!mode.empty()) cfg.mode = losses::train_mode_from_string(mode);
  cfg.validate();
  const auto data = synth::load_dataset(dataset_dir);

  std::string log;
  const auto t0 = std::chrono::steady_clock::now();
  auto on_epoch = [&](const train::EpochLog& e) {
    char line[256];
    std::snprintf(line, sizeof line, "epoch %zu steps %zu L_cls %.6f L_reg %.6f L_trans %.6f total %.6f", e.epoch + 1,
                  e.steps, e.cls, e.reg, e.trans, e.total);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << line << " (" << static_cast<long>(secs) << "s)\n";
    log += line;
    log += "\n";
  };
  const auto result = train::train_model(data.episodes, data.config, cfg, on_epoch);
  checkpoint::save(out_path, result.model, cfg.mode);
  if (!log_path.empty()) io::write_text(log_path, log);
  std::cout << io::sha256_hex(io::read_text(out_path)) << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& dataset_dir, const std::string& out_path,
              const std::string& post_path) {
  const auto ck = checkpoint::load(ckpt_path);
  const auto data = synth::load_dataset(dataset_dir);
  const auto post = pipeline::postprocess_for(ck.mode, config::postprocess_config(read_optional_config(post_path)));
  io::write_detections(out_path, pipeline::infer_dataset(ck.model, data.episodes, post));
  return 0;
}

int cmd_link(const std::string& dets_path, const std::string& config_path, const std::string& out_path,
             const std::string& frames_out) {
  const auto cfg = config::link_config(read_optional_config(config_path));
  const auto linked = pipeline::link_all(io::read_detections(dets_path), cfg);
  io::write_tubes(out_path, linked.tubes);
  if (!frames_out.empty()) io::write_detections(frames_out, linked.frames);
  return 0;
}

int cmd_eval(const std::string& tubes_path, const std::string& dets_path, std::string gt_path, double temporal_thr,
             const std::string& out_path) {
  if (tubes_path.empty() && dets_path.empty()) throw std::invalid_argument("eval: give --tubes and/or --detections");
  if (fs::is_directory(gt_path)) gt_path = (fs::path(gt_path) / "gt.jsonl").string();
  const auto gts = io::read_gt(gt_path);
  std::optional<std::vector<io::DetectionRecord>> dets;
  std::optional<std::vector<tubes::ScoredTube>> tubes;
  if (!dets_path.empty()) dets = io::read_detections(dets_path);
  if (!tubes_path.empty()) tubes = io::read_tubes(tubes_path);
  const auto metrics =
      pipeline::evaluate(dets ? &*dets : nullptr, tubes ? &*tubes : nullptr, gts, temporal_thr);
  const auto text = io::metrics_to_json(metrics);
  if (out_path.empty()) {
    std::cout << text;
  } else {
    io::write_text(out_path, text);
  }
  return 0;
}

int cmd_gradcheck(double fault_scale, double tol) {
  const auto checks = pipeline::gradcheck_suite(fault_scale, 1e-6, tol);
  bool ok = true;
  for (const auto& c : checks) {
    const auto& r = c.report;
    std::printf("%-28s max_rel_error %.3e  checked %zu  %s\n", c.name.c_str(), r.max_rel_error, r.coordinates,
                r.pass ? "ok" : "FAIL");
    ok = ok && r.pass;
  }
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : 1;
}

int cmd_fuse(const std::string& a, const std::string& b, const std::string& out_path) {
  io::write_detections(out_path, pipeline::fuse_detections(io::read_detections(a), io::read_detections(b)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transition-aware action detection on synthetic video"};
  app.require_subcommand(1);
  int status = 0;

  std::string config_path, out_dir;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("out", out_dir, "output directory")->required();

  std::string dataset_dir, out_path, mode, log_path;
  auto* train_cmd = app.add_subcommand("train", "Train a detector");
  train_cmd->add_option("dataset", dataset_dir)->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("out", out_path, "checkpoint path")->required();
  train_cmd->add_option("--mode", mode, "tac | no-tac | bg-baseline (overrides the config)")
      ->check(CLI::IsMember({"tac", "no-tac", "bg-baseline"}));
  train_cmd->add_option("--log", log_path, "write the per-epoch loss log here");

  std::string ckpt_path, post_path;
  auto* infer_cmd = app.add_subcommand("infer", "Run a checkpoint over a dataset");
  infer_cmd->add_option("checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("dataset", dataset_dir)->required()->check(CLI::ExistingDirectory);
  infer_cmd->add_option("out", out_path, "detections.jsonl")->required();
  infer_cmd->add_option("--config", post_path, "post-processing config")->check(CLI::ExistingFile);

  std::string dets_path, frames_out;
  auto* link_cmd = app.add_subcommand("link", "Link, trim and score action tubes");
  link_cmd->add_option("detections", dets_path)->required()->check(CLI::ExistingFile);
  link_cmd->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  link_cmd->add_option("out", out_path, "tubes.jsonl")->required();
  link_cmd->add_option("--frames-out", frames_out, "refined frame detections");

  std::string tubes_path, gt_path;
  double temporal_thr = 0.5;
  auto* eval_cmd = app.add_subcommand("eval", "Compute frame-, video- and temporal-mAP");
  eval_cmd->add_option("--tubes", tubes_path)->check(CLI::ExistingFile);
  eval_cmd->add_option("--detections", dets_path)->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", gt_path, "gt.jsonl or dataset directory")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--temporal-threshold", temporal_thr)->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--out", out_path, "metrics JSON (stdout when absent)");

  double fault_scale = 1.0, tol = 1e-4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc_cmd->add_option("--fault-scale", fault_scale, "multiply every input gradient (fault injection)");
  gc_cmd->add_option("--tol", tol);

  std::string fuse_a, fuse_b;
  auto* fuse_cmd = app.add_subcommand("fuse", "Average scores of two detection files");
  fuse_cmd->add_option("a", fuse_a)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("b", fuse_b)->required()->check(CLI::ExistingFile);
  fuse_cmd->add_option("out", out_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) status = cmd_synth(config_path, out_dir);
    if (*train_cmd) status = cmd_train(dataset_dir, config_path, out_path, mode, log_path);
    if (*infer_cmd) status = cmd_infer(ckpt_path, dataset_dir, out_path, post_path);
    if (*link_cmd) status = cmd_link(dets_path, config_path, out_path, frames_out);
    if (*eval_cmd) status = cmd_eval(tubes_path, dets_path, gt_path, temporal_thr, out_path);
    if (*gc_cmd) status = cmd_gradcheck(fault_scale, tol);
    if (*fuse_cmd) status = cmd_fuse(fuse_a, fuse_b, out_path);
  } catch (const std::exception& e) {
    std::cerr << "tacnet: " << e.what() << "\n";
    return 2;
  }
  return status;
}
