#pragma once

// Helpers shared by the acceptance checks: random tensors, a tiny synthetic
// corpus, and subprocess plumbing for the checks that drive the command-line
// binary (PIVAE_CLI is injected by the build).

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pivae/dataset.hpp"
#include "pivae/rng.hpp"
#include "pivae/tensor.hpp"

namespace acceptance {

inline pivae::Tensor rand_mat(pivae::Rng& rng, Eigen::Index r, Eigen::Index c,
                              double scale) {
  pivae::Tensor t(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) t(i, j) = scale * rng.normal();
  }
  return t;
}

// Smooth random functions with an optional exact-antiderivative channel;
// enough to initialize models with realistic channel scaling.
inline pivae::PriorDataset smooth_dataset(pivae::Rng& rng, int functions,
                                          int points, int dim,
                                          bool with_integral) {
  pivae::PriorDataset ds;
  ds.dim = dim;
  ds.with_integral = with_integral;
  for (int f = 0; f < functions; ++f) {
    pivae::FunctionDraw draw;
    draw.id = f;
    draw.locations = rand_mat(rng, points, dim, 1.0);
    draw.values.resize(points);
    const double a = rng.uniform(0.5, 1.5);
    const double p = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < points; ++i) {
      draw.values(i) = a * std::sin(draw.locations.row(i).sum() + p);
    }
    if (with_integral) {
      draw.integral.resize(points);
      for (int i = 0; i < points; ++i) {
        draw.integral(i) = -a * std::cos(draw.locations.row(i).sum() + p);
      }
    }
    ds.draws.push_back(std::move(draw));
  }
  return ds;
}

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr, interleaved
};

inline RunResult run_tool(const std::string& args) {
  const std::string command = std::string(PIVAE_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("popen failed");
  RunResult result;
  char buffer[4096];
  while (std::fgets(buffer, sizeof(buffer), pipe) != nullptr) {
    result.output += buffer;
  }
  const int status = pclose(pipe);
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

inline std::string make_temp_dir() {
  char pattern[] = "/tmp/pivae_accept_XXXXXX";
  if (mkdtemp(pattern) == nullptr) {
    throw std::runtime_error("mkdtemp failed");
  }
  return pattern;
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace acceptance
