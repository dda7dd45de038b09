#pragma once

#include <stdexcept>
#include <string>

namespace sid {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied data was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File-system or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// An out-of-process or remote adapter (VLM, encoder, segmenter, backend)
/// failed or returned something unusable.
class AdapterError : public Error {
 public:
  using Error::Error;
};

}  // namespace sid
