#pragma once

#include "fmgp/bundle.hpp"
#include "fmgp/training.hpp"

#include <string>

namespace fmgp::io {

/// Serialized fit output: variational state, kernel and fit configuration,
/// format version. Loading reproduces predictions bitwise.
struct StateFile {
  core::VariationalState state;
  training::FitConfig config;
  /// In-memory only; wall-clock never enters the file so that equal seeds
  /// produce byte-identical state files.
  double fit_seconds = 0.0;
};

void save_state(const StateFile& s, const std::string& path);
StateFile load_state(const std::string& path);

}  // namespace fmgp::io
