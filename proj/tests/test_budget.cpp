#include "tokenforce/budget.hpp"

#include <doctest.h>

#include <numeric>

using namespace tokenforce;

TEST_CASE("forward and backward costs follow the 2N/4N rule") {
  CHECK(cost_forward(1000, 10) == 20000);
  CHECK(cost_forward(1000, 10, 5) == 100000);
  CHECK(cost_backward(1000, 10) == 40000);
  // one gradient step is a forward plus a backward
  CHECK(cost_forward(1000, 10) + cost_backward(1000, 10) == 60000);
  CHECK_THROWS_AS(cost_forward(1000, 0), std::invalid_argument);
  CHECK_THROWS_AS(cost_backward(1000, 0), std::invalid_argument);
}

TEST_CASE("try_charge admits up to the boundary and never beyond") {
  FlopMeter meter(1, 100);
  CHECK(meter.try_charge(100));
  CHECK(meter.used() == 100);
  CHECK_FALSE(meter.try_charge(1));
  CHECK(meter.used() == 100);
  CHECK(meter.try_charge(0));
  CHECK(meter.used() == 100);
}

TEST_CASE("progress is the exact used/limit ratio") {
  FlopMeter meter(1, 100000000000000000LL);
  CHECK(meter.progress() == 0.0);
  CHECK(meter.try_charge(40000000000000000LL));
  CHECK(meter.progress() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(meter.try_charge(60000000000000000LL));
  CHECK(meter.progress() == 1.0);
}

TEST_CASE("used equals the sum of the accepted charge log") {
  FlopMeter meter(1, 1000);
  meter.try_charge(300);
  meter.try_charge(900);  // rejected
  meter.try_charge(250);
  meter.try_charge(450);
  const auto& log = meter.charges();
  CHECK(log.size() == 3);
  CHECK(std::accumulate(log.begin(), log.end(), Flops{0}) == meter.used());
  CHECK(meter.used() == 1000);
}

TEST_CASE("used is monotone non-decreasing across mixed charges") {
  FlopMeter meter(1, 500);
  Flops last = 0;
  for (Flops c : {120, 700, 0, 380, 1}) {
    meter.try_charge(c);
    CHECK(meter.used() >= last);
    last = meter.used();
  }
  CHECK(meter.used() <= meter.limit());
}
