#include "nmt/errors.hpp"

#include <sstream>

namespace nmt {

IoError::IoError(const std::string &path, const std::string &what)
    : Error(path + ": " + what), path_(path) {}

NonFiniteError::NonFiniteError(const std::string &name, const std::string &what)
    : Error(what + " (" + name + ")"), name_(name) {}

NotAnArchiveError::NotAnArchiveError() : ArchiveError("not a model archive") {}

UnsupportedVersionError::UnsupportedVersionError(std::uint32_t found,
                                                 std::uint32_t supported)
    : ArchiveError("unsupported archive version " + std::to_string(found) +
                   " (this build reads version " + std::to_string(supported) +
                   ")"),
      version_(found) {}

CorruptArchiveError::CorruptArchiveError(std::size_t offset,
                                         const std::string &what)
    : ArchiveError("corrupt archive at offset " + std::to_string(offset) +
                   ": " + what),
      offset_(offset) {}

std::string shape_to_string(const std::vector<std::size_t> &shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

}  // namespace nmt
