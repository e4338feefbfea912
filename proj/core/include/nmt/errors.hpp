#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (model, data, decoding, training).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string &path, const std::string &what);
  const std::string &path() const { return path_; }

 private:
  std::string path_;
};

// Malformed or inconsistent corpus data.
class DataError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity reached a place where only finite values are allowed.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string &name, const std::string &what);
  const std::string &name() const { return name_; }

 private:
  std::string name_;
};

class ArchiveError : public Error {
 public:
  using Error::Error;
};

class NotAnArchiveError : public ArchiveError {
 public:
  NotAnArchiveError();
};

class UnsupportedVersionError : public ArchiveError {
 public:
  UnsupportedVersionError(std::uint32_t found, std::uint32_t supported);
  std::uint32_t version() const { return version_; }

 private:
  std::uint32_t version_;
};

class CorruptArchiveError : public ArchiveError {
 public:
  CorruptArchiveError(std::size_t offset, const std::string &what);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::string shape_to_string(const std::vector<std::size_t> &shape);

}  // namespace nmt
