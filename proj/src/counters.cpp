#include "tap/counters.hpp"

#include "tap/error.hpp"

namespace tap {

namespace {
thread_local OpCounts* g_sink = nullptr;
}

namespace counters {

OpCounts* active() noexcept { return g_sink; }

Scope::Scope(OpCounts& sink) noexcept : previous_(g_sink) { g_sink = &sink; }

Scope::~Scope() { g_sink = previous_; }

}  // namespace counters

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::NotSealed: return "NotSealed";
    case Errc::WrongKey: return "WrongKey";
    case Errc::EmptyTable: return "EmptyTable";
    case Errc::ZeroLength: return "ZeroLength";
    case Errc::IndexCollision: return "IndexCollision";
    case Errc::BeforeStart: return "BeforeStart";
    case Errc::MissingExtras: return "MissingExtras";
    case Errc::UnknownIndexValue: return "UnknownIndexValue";
    case Errc::NotInWindow: return "NotInWindow";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::HeadMismatch: return "HeadMismatch";
    case Errc::WrongGroupKey: return "WrongGroupKey";
    case Errc::RetrievalFailed: return "RetrievalFailed";
    case Errc::SegmentMismatch: return "SegmentMismatch";
    case Errc::NoBroadcastSeen: return "NoBroadcastSeen";
    case Errc::NoTicket: return "NoTicket";
    case Errc::ScenarioRoutingFailure: return "ScenarioRoutingFailure";
    case Errc::UnderivableSpoof: return "UnderivableSpoof";
    case Errc::BudgetExhausted: return "BudgetExhausted";
    case Errc::ConfigParse: return "ConfigParse";
    case Errc::Malformed: return "Malformed";
  }
  return "Unknown";
}

}  // namespace tap
