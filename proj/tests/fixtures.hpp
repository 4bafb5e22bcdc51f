#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "support.hpp"

namespace hydroclean::testing {

namespace fs = std::filesystem;

/// A scratch directory removed on destruction, unique per test and process.
struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag = "") {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        std::string name = info ? std::string(info->test_suite_name()) + "." + info->name() : "acceptance";
        for (auto& c : name)
            if (c == '/') c = '_';
        path = fs::temp_directory_path() / ("hydroclean-" + name + tag + "-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace hydroclean::testing
