#include "pivae/dataset_io.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "pivae/errors.hpp"

namespace pivae {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void bad_record(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw IoError(path + ":" + std::to_string(line) + ": " + what);
}

VectorXd parse_vector(const ordered_json& j, const std::string& path,
                      std::size_t line, const char* field) {
  if (!j.is_array()) {
    bad_record(path, line, std::string(field) + " must be an array");
  }
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& e : j) {
    if (!e.is_number()) {
      bad_record(path, line, std::string(field) + " must hold numbers");
    }
    v(i++) = e.get<double>();
  }
  return v;
}

}  // namespace

void write_dataset_jsonl(const PriorDataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const FunctionDraw& d : dataset.draws) {
    ordered_json j;
    j["id"] = d.id;
    ordered_json locs = ordered_json::array();
    for (Eigen::Index i = 0; i < d.locations.rows(); ++i) {
      ordered_json row = ordered_json::array();
      for (Eigen::Index k = 0; k < d.locations.cols(); ++k) {
        row.push_back(d.locations(i, k));
      }
      locs.push_back(std::move(row));
    }
    j["locations"] = std::move(locs);
    ordered_json vals = ordered_json::array();
    for (Eigen::Index i = 0; i < d.values.size(); ++i) {
      vals.push_back(d.values(i));
    }
    j["values"] = std::move(vals);
    if (dataset.with_integral) {
      ordered_json integ = ordered_json::array();
      for (Eigen::Index i = 0; i < d.integral.size(); ++i) {
        integ.push_back(d.integral(i));
      }
      j["channels"] = ordered_json{{"integral", std::move(integ)}};
    }
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

PriorDataset read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  PriorDataset dataset;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      bad_record(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) bad_record(path, line_no, "record must be an object");
    for (const auto& [key, value] : j.items()) {
      if (key != "id" && key != "locations" && key != "values" &&
          key != "channels") {
        bad_record(path, line_no, "unknown key '" + key + "'");
      }
    }
    if (!j.contains("id") || !j["id"].is_number_integer()) {
      bad_record(path, line_no, "missing integer 'id'");
    }
    if (!j.contains("locations") || !j["locations"].is_array() ||
        j["locations"].empty()) {
      bad_record(path, line_no, "missing non-empty 'locations'");
    }
    if (!j.contains("values")) bad_record(path, line_no, "missing 'values'");

    FunctionDraw d;
    d.id = j["id"].get<int>();
    const auto& jl = j["locations"];
    Eigen::Index record_dim = -1;
    d.locations.resize(static_cast<Eigen::Index>(jl.size()), 0);
    Eigen::Index row = 0;
    for (const auto& jr : jl) {
      if (!jr.is_array() || jr.empty()) {
        bad_record(path, line_no, "each location must be a non-empty array");
      }
      if (record_dim < 0) {
        record_dim = static_cast<Eigen::Index>(jr.size());
        d.locations.resize(static_cast<Eigen::Index>(jl.size()), record_dim);
      }
      if (static_cast<Eigen::Index>(jr.size()) != record_dim) {
        bad_record(path, line_no, "ragged location dimensions");
      }
      Eigen::Index col = 0;
      for (const auto& e : jr) {
        if (!e.is_number()) {
          bad_record(path, line_no, "locations must hold numbers");
        }
        d.locations(row, col++) = e.get<double>();
      }
      ++row;
    }
    d.values = parse_vector(j["values"], path, line_no, "values");
    if (d.values.size() != d.locations.rows()) {
      bad_record(path, line_no, "values length does not match locations");
    }
    bool record_integral = false;
    if (j.contains("channels")) {
      const auto& jc = j["channels"];
      if (!jc.is_object()) bad_record(path, line_no, "channels must be an object");
      for (const auto& [key, value] : jc.items()) {
        if (key != "integral") {
          bad_record(path, line_no, "unknown channel '" + key + "'");
        }
      }
      if (!jc.contains("integral")) {
        bad_record(path, line_no, "channels present without 'integral'");
      }
      d.integral = parse_vector(jc["integral"], path, line_no, "integral");
      if (d.integral.size() != d.values.size()) {
        bad_record(path, line_no, "integral length does not match values");
      }
      record_integral = true;
    }

    if (dataset.draws.empty()) {
      dataset.dim = static_cast<int>(record_dim);
      dataset.with_integral = record_integral;
    } else {
      if (static_cast<int>(record_dim) != dataset.dim) {
        bad_record(path, line_no, "dimension differs from earlier records");
      }
      if (record_integral != dataset.with_integral) {
        bad_record(path, line_no, "channel set differs from earlier records");
      }
    }
    dataset.draws.push_back(std::move(d));
  }
  if (dataset.draws.empty()) throw IoError(path + ": no records");
  try {
    dataset.validate();
  } catch (const Error& e) {
    throw IoError(path + ": " + e.what());
  }
  return dataset;
}

}  // namespace pivae
