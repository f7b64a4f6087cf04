#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace lsanet {

/// Contract violations (shape mismatches, bad configs, malformed files).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

namespace detail {
struct MsgStream {
  std::ostringstream os;
  template <class V>
  MsgStream& operator<<(V&& v) {
    os << std::forward<V>(v);
    return *this;
  }
  std::string str() const { return os.str(); }
};
}  // namespace detail

// Formats the message only on failure.
#define LSANET_CHECK(cond, msg)                                \
  do {                                                         \
    if (!(cond)) ::lsanet::fail((::lsanet::detail::MsgStream{} << msg).str()); \
  } while (0)

enum class Mode { kTrain, kInfer };

}  // namespace lsanet
