#include <set>

#include "doctest.h"
#include "mgbp/plan.hpp"

using namespace mgbp;

namespace {

// Counts Downscale calls by literally recursing the back-projection loop.
int64_t brute_force_bp_calls(int mu, int k) {
    if (k <= 1) return 0;
    int64_t calls = 0;
    for (int s = 1; s <= mu; ++s) calls += 1 + brute_force_bp_calls(mu, k - 1);
    return calls;
}

std::vector<int64_t> schedule_of(int levels) {
    std::vector<int64_t> s;
    for (int k = 0; k < levels; ++k) s.push_back(4 + 2 * k);
    return s;
}

}  // namespace

TEST_CASE("unfold mu=2 L=5 module counts") {
    const auto plan = unfold(2, 5, {64, 48, 32, 16, 8}, 3);
    CHECK(plan.count(ModuleKind::upscale) == 30);
    CHECK(plan.count(ModuleKind::downscale) == 30);
    CHECK(plan.count(ModuleKind::analysis) == 5);
    CHECK(plan.count(ModuleKind::synthesis) == 1);
    CHECK(bp_module_count(2, 5) == 2 + 4 + 8 + 16);
}

TEST_CASE("closed-form counts agree with brute-force recursion for mu 1..3, L 1..6") {
    for (int mu = 1; mu <= 3; ++mu) {
        for (int L = 1; L <= 6; ++L) {
            const auto plan = unfold(mu, L, schedule_of(L), 3);
            CAPTURE(mu);
            CAPTURE(L);
            CHECK(plan.count(ModuleKind::upscale) == brute_force_bp_calls(mu, L));
            CHECK(plan.count(ModuleKind::downscale) == bp_module_count(mu, L));
            CHECK(plan.count(ModuleKind::analysis) == L);
            CHECK(plan.count(ModuleKind::synthesis) == 1);
        }
    }
    CHECK(unfold(1, 5, schedule_of(5), 3).count(ModuleKind::upscale) == 4);
}

TEST_CASE("levels = 1 has no back-projection modules") {
    for (int mu = 1; mu <= 3; ++mu) {
        const auto plan = unfold(mu, 1, {8}, 3);
        CHECK(plan.instances.size() == 2);
        CHECK(plan.instances[0].tag.kind == ModuleKind::analysis);
        CHECK(plan.instances[1].tag.kind == ModuleKind::synthesis);
        CHECK(count_cost(plan, 32, 32) ==
              plan.instances[0].conv.macs(32, 32) + plan.instances[1].conv.macs(32, 32));
    }
}

TEST_CASE("default schedule and presets") {
    const auto plan = default_plan();
    CHECK(plan.levels == 6);
    CHECK(plan.mu == 2);
    CHECK(plan.feature_schedule == std::vector<int64_t>{256, 192, 128, 92, 48, 9});
    const auto desk = desk_plan();
    CHECK(desk.levels == 4);
    CHECK(desk.feature_schedule == std::vector<int64_t>{32, 24, 16, 8});
}

TEST_CASE("tags are unique and the dry run is deterministic") {
    for (int mu = 1; mu <= 3; ++mu) {
        for (int L = 1; L <= 6; ++L) {
            const auto a = unfold(mu, L, schedule_of(L), 5);
            const auto b = unfold(mu, L, schedule_of(L), 5);
            CHECK(a == b);
            std::set<std::string> seen;
            for (const auto& m : a.instances) {
                CHECK(seen.insert(m.tag.str()).second);
                CHECK(ModuleTag::parse(m.tag.str()) == m.tag);
            }
        }
    }
}

TEST_CASE("execution order follows the recursion") {
    const auto plan = unfold(2, 3, {4, 6, 8}, 3);
    std::vector<std::string> tags;
    for (const auto& m : plan.instances) tags.push_back(m.tag.str());
    const std::vector<std::string> expect{
        "analysis.1", "analysis.2", "analysis.3",
        "down.3.1", "down.2.1-1", "up.2.1-1", "down.2.1-2", "up.2.1-2", "up.3.1",
        "down.3.2", "down.2.2-1", "up.2.2-1", "down.2.2-2", "up.2.2-2", "up.3.2",
        "synthesis"};
    CHECK(tags == expect);
}

TEST_CASE("conv specs follow the stride/kernel realization") {
    const auto plan = unfold(2, 4, {32, 24, 16, 8}, 3);
    const auto& a1 = plan.instances[*plan.find(ModuleTag{ModuleKind::analysis, 1, {}})].conv;
    CHECK(a1.stride == 8);
    CHECK(a1.kernel == 16);
    CHECK(a1.in_channels == 4);
    CHECK(a1.out_channels == 32);
    const auto& a4 = plan.instances[*plan.find(ModuleTag{ModuleKind::analysis, 4, {}})].conv;
    CHECK(a4.stride == 1);
    CHECK(a4.kernel == 3);
    const auto& d = plan.instances[*plan.find(ModuleTag{ModuleKind::downscale, 4, {1}})].conv;
    CHECK(d.in_channels == 8);
    CHECK(d.out_channels == 16);
    CHECK(d.kernel == 4);
    const auto& u = plan.instances[*plan.find(ModuleTag{ModuleKind::upscale, 2, {2, 1, 2}})].conv;
    CHECK(u.transposed);
    CHECK(u.in_channels == 64);
    CHECK(u.out_channels == 24);
    const auto& s = plan.instances.back().conv;
    CHECK(s.in_channels == 8);
    CHECK(s.out_channels == 3);
}

TEST_CASE("shape replay is consistent for odd and even sizes and all filter sizes") {
    for (int f : {3, 5, 7}) {
        const auto plan = unfold(2, 3, {6, 5, 4}, f);
        for (int64_t size = 16; size <= 97; ++size) {
            CAPTURE(size);
            const auto shapes = trace_shapes(plan, size, size + 3);
            CHECK(shapes.back().output == Shape{1, 3, size, size + 3});
        }
    }
}

TEST_CASE("count_cost scales linearly with pixel count") {
    const auto plan = default_plan();
    const double small = static_cast<double>(count_cost(plan, 512, 768));
    const double large = static_cast<double>(count_cost(plan, 1024, 1536));
    CHECK(large / small == doctest::Approx(4.0).epsilon(0.01));
    CHECK(count_cost(plan, 512, 768) == count_cost(plan, 512, 768));
}

TEST_CASE("unfold rejects bad arguments") {
    CHECK_THROWS_AS(unfold(2, 3, {4, 4}, 3), std::invalid_argument);
    CHECK_THROWS_AS(unfold(0, 3, {4, 4, 4}, 3), std::invalid_argument);
    CHECK_THROWS_AS(unfold(2, 3, {4, 4, 4}, 4), std::invalid_argument);
}

TEST_CASE("plan descriptor round-trips") {
    const auto plan = unfold(3, 4, {7, 6, 5, 4}, 5);
    CHECK(NetworkPlan::from_descriptor(plan.descriptor()) == plan);
    CHECK(describe(plan, 64, 64).find("upscale_modules: 39") != std::string::npos);
}
