#pragma once

#include <stdexcept>
#include <string>

namespace facadefixer {

// Contract violation on inputs: bad shapes, out-of-range values, duplicate ids.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Network-level failure while talking to an expert endpoint.
class TransportError : public std::runtime_error {
 public:
  explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

// Endpoint replied, but the body does not follow the wire schema.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Unparseable verdict or document.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable or corrupt on-disk state: manifests, fixtures, checkpoints.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace facadefixer
