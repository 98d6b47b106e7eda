#pragma once

#include <cstdint>
#include <string>

#include "pivae/tensor.hpp"

namespace pivae {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // flags, config, or malformed request
inline constexpr int kExitNumeric = 3;  // numeric failure during the run
inline constexpr int kExitIo = 4;       // file system or format failure

// Mean over points of -log N(y_i | mean_i, sd_i^2); the NLL metric reported
// by the benchmark command.
double mean_negative_log_density(const VectorXd& values, const VectorXd& mean,
                                 const VectorXd& sd);

// Comma-separated numeric table with an optional single header line; every
// data row must hold exactly `columns` numbers.
MatrixXd read_numeric_csv(const std::string& path, int columns);

// Entry point of the command-line tool; maps library errors to exit codes
// and never throws.
int run_cli(int argc, const char* const* argv);

}  // namespace pivae
