#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mfenkf {

/// Library error carrying a stable machine-checkable code ("ShapeMismatch",
/// "SingularInnovation", ...) plus an optional human detail string.
class Error : public std::runtime_error {
public:
    explicit Error(std::string code, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? code : code + ": " + detail),
          code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

inline void require(bool cond, const char* code, const std::string& detail = {}) {
    if (!cond) throw Error(code, detail);
}

}  // namespace mfenkf
