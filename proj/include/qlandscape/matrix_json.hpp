#pragma once

// Matrix exchange format: {"dim": d, "re": [[...]], "im": [[...]]}, row-major.

#include <fstream>
#include <string>

#include "json.hpp"
#include "qlandscape/operators.hpp"

namespace qlandscape {

inline nlohmann::json matrix_to_json(const CMatrix& m) {
  nlohmann::json re = nlohmann::json::array();
  nlohmann::json im = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json rr = nlohmann::json::array();
    nlohmann::json ir = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      rr.push_back(m(r, c).real());
      ir.push_back(m(r, c).imag());
    }
    re.push_back(std::move(rr));
    im.push_back(std::move(ir));
  }
  return {{"dim", m.rows()}, {"re", std::move(re)}, {"im", std::move(im)}};
}

inline CMatrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dim") || !j.contains("re")) {
    throw Error(ErrorKind::InvalidArgument, "matrix JSON needs \"dim\" and \"re\"");
  }
  const int d = j.at("dim").get<int>();
  if (d < 1) throw Error(ErrorKind::InvalidDimension, "matrix JSON: dim must be positive");
  const auto& re = j.at("re");
  const bool has_im = j.contains("im");
  const auto& im = has_im ? j.at("im") : re;
  auto check_rows = [d](const nlohmann::json& a, const char* name) {
    if (!a.is_array() || static_cast<int>(a.size()) != d) {
      throw Error(ErrorKind::DimensionMismatch, std::string("matrix JSON: \"") + name + "\" must have dim rows");
    }
    for (const auto& row : a) {
      if (!row.is_array() || static_cast<int>(row.size()) != d) {
        throw Error(ErrorKind::DimensionMismatch, std::string("matrix JSON: \"") + name + "\" rows must have dim entries");
      }
    }
  };
  check_rows(re, "re");
  if (has_im) check_rows(im, "im");
  CMatrix m(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      m(r, c) = Complex(re[r][c].get<double>(), has_im ? im[r][c].get<double>() : 0.0);
    }
  }
  return m;
}

inline CMatrix load_matrix_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open matrix file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, "malformed matrix JSON in " + path + ": " + e.what());
  }
  return matrix_from_json(j);
}

}  // namespace qlandscape
