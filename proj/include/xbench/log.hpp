#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace xbench {

/// Shared stderr logger; level comes from XPLAIN_LOG (trace|debug|info|warn|error|off, default warn).
inline spdlog::logger& log() {
    static const std::shared_ptr<spdlog::logger> logger = [] {
        auto l = spdlog::stderr_color_mt("xbench");
        const char* env = std::getenv("XPLAIN_LOG");
        l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
        l->set_pattern("[%l] %v");
        return l;
    }();
    return *logger;
}

} // namespace xbench
