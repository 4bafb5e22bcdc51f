#include <cstdlib>
#include <fstream>

#include "fixtures.hpp"

using namespace hydroclean;
namespace fs = std::filesystem;
using hydroclean::testing::TempDir;

namespace {

struct EnvGuard {
    std::string name;
    EnvGuard(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

fs::path write_file(const fs::path& dir, const std::string& text) {
    const auto p = dir / "config.toml";
    std::ofstream(p) << text;
    return p;
}

}  // namespace

TEST(Config, DefaultsWithoutFile) {
    const auto c = load_pipeline_config(std::nullopt);
    EXPECT_EQ(c.join_tier, "manual-partial");
    EXPECT_EQ(c.conflict_policy, "drop");
    EXPECT_EQ(c.mui_clean_below, 40.0);
    EXPECT_EQ(c.mui_dirty_above, 250.0);
    EXPECT_EQ(c.top_k, 100);
    EXPECT_GE(c.worker_count(), 1u);
}

TEST(Config, FileOverridesDefaults) {
    TempDir d;
    const auto p = write_file(d.path, "[pipeline]\ntop_k = 25\nconflict_policy = \"min\"\nspike_theta = 12.5\n"
                                      "[plan]\nstream_count = 12\nmui_rate = 0.2\n");
    const auto c = load_pipeline_config(p);
    EXPECT_EQ(c.top_k, 25);
    EXPECT_EQ(c.policy(), integrity::ConflictPolicy::KeepMin);
    EXPECT_EQ(c.spike_theta, 12.5);
    const auto plan = load_plan(p);
    EXPECT_EQ(plan.stream_count, 12u);
    EXPECT_EQ(plan.mui_rate, 0.2);
}

TEST(Config, EnvironmentOverridesFile) {
    TempDir d;
    const auto p = write_file(d.path, "[pipeline]\ntop_k = 25\n");
    EnvGuard g1("HYDROCLEAN_PIPELINE_TOP_K", "7");
    EnvGuard g2("HYDROCLEAN_PLAN_SEED", "99");
    EnvGuard g3("HYDROCLEAN_PIPELINE_JOIN_TIER", "three-field-exact");
    const auto c = load_pipeline_config(p);
    EXPECT_EQ(c.top_k, 7);
    EXPECT_EQ(c.tier(), ingestion::JoinTier::ThreeFieldExact);
    EXPECT_EQ(load_plan(std::nullopt).seed, 99u);
}

TEST(Config, RejectsUnknownKeysBadTypesAndBadValues) {
    TempDir d;
    EXPECT_THROW(load_pipeline_config(write_file(d.path, "[pipeline]\ntopk = 3\n")), Error);
    EXPECT_THROW(load_pipeline_config(write_file(d.path, "[pipeline]\ntop_k = \"many\"\n")), Error);
    EXPECT_THROW(load_pipeline_config(write_file(d.path, "[pipeline]\nmui_clean_below = 300.0\n")), Error);
    EXPECT_THROW(load_pipeline_config(write_file(d.path, "[pipeline]\njoin_tier = \"fuzzy\"\n")), Error);
    EXPECT_THROW(load_pipeline_config(write_file(d.path, "not toml [")), Error);
    EXPECT_THROW(load_pipeline_config(d.path / "missing.toml"), Error);
    EnvGuard g("HYDROCLEAN_PIPELINE_SPIKE_THETA", "ten");
    EXPECT_THROW(load_pipeline_config(std::nullopt), Error);
}

TEST(Config, PlanValidation) {
    TempDir d;
    EXPECT_THROW(load_plan(write_file(d.path, "[plan]\nmui_rate = 1.5\n")), Error);
    EXPECT_THROW(load_plan(write_file(d.path, "[plan]\nhours = 100\n")), Error);
    EXPECT_NO_THROW(load_plan(write_file(d.path, "[plan]\nhours = 4416\nmui_last_day = 150\n")));
}

TEST(Config, ShippedDefaultFileMatchesBuiltInDefaults) {
    const fs::path p = fs::path(HYDROCLEAN_SOURCE_DIR) / "configs" / "default_plan.toml";
    EXPECT_EQ(config_to_json(load_pipeline_config(p)), config_to_json(PipelineConfig{}));
    EXPECT_EQ(plan_to_json(load_plan(p)), plan_to_json(synth::SyntheticPlan{}));
}
