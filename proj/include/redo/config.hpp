#pragma once

// Run configuration: a flat key = value file with [sections].
//
//   [network]  image_size channels regions latent_dim ch_f ch_g ch_d
//   [train]    batch_size max_steps lr_f lr_gdd adam_beta1 adam_beta2 adam_eps weight_decay_f
//              init_gain seed checkpoint_every eval_every eval_batch
//   [restart]  enabled max_restarts collapse_epsilon collapse_patience probe_window
//   [loss]     lambda_z ("auto" or a number)  preset (default | lfw)
//   [data]     path | images [masks]  split (manifest | flowers | "a,b,c")  split_seed
//   [output]   dir  panels  panel_count

#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "redo/networks.hpp"
#include "redo/training.hpp"

namespace redo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string path;    // dataset folder written by make-dataset (images/, masks/, manifest.csv)
  std::string images;  // or a plain image folder
  std::string masks;   // optional ground truth for `images`
  std::string split = "manifest";
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  NetworkConfig net;
  TrainConfig train;
  DataConfig data;
  std::string out_dir = "run";
  bool panels = true;
  int panel_count = 4;

  /// Value checks plus existence of every referenced path.
  void validate() const;
};

/// "section.key" -> raw value, quotes stripped. Throws ConfigError with the line number.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source = "config");

RunConfig run_config_from_text(const std::string& text, const std::string& source = "config");
RunConfig load_run_config(const std::string& path);

/// Explicit path, else $REDO_CONFIG, else nothing.
std::optional<std::string> resolve_config_path(const std::string& flag);

std::string to_config_text(const RunConfig& c);

}  // namespace redo
