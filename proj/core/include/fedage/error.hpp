// Exception taxonomy shared by all fedage components.
#pragma once

#include <stdexcept>
#include <string>

namespace fedage {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument shape/dimension (feature vs weight length, matrix rows, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A step / index argument outside its documented range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (schedules, plans, experiment files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced while training; message names epoch and batch.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// A statistical test that cannot be run on its input (e.g. all-zero
// Wilcoxon differences, zero-margin contingency table).
class DegenerateTestError : public Error {
 public:
  using Error::Error;
};

// Degenerate regression input (zero predictor variance).
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public Error {
 public:
  using Error::Error;
};

// Row-addressed cohort ingestion failure.
class CsvError : public Error {
 public:
  CsvError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Wire/transport failures, with a machine-checkable kind.
class ProtocolError : public Error {
 public:
  enum class Kind {
    malformed_length,
    unknown_version,
    truncated_payload,
    malformed_payload,
    handshake,
    io,
  };

  ProtocolError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// A federation round that could not complete; names the offending client.
class RoundFailureError : public Error {
 public:
  RoundFailureError(int client_id, int round, const std::string& what)
      : Error("round " + std::to_string(round) + ", client " +
              std::to_string(client_id) + ": " + what),
        client_id_(client_id),
        round_(round) {}
  int client_id() const { return client_id_; }
  int round() const { return round_; }

 private:
  int client_id_;
  int round_;
};

}  // namespace fedage
