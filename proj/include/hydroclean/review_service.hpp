#pragma once

// HTTP review API over the live post-sweep state: queue, stream view,
// verdict submission, reports.

#include <shared_mutex>

#include <httplib.h>

#include "pipeline.hpp"

namespace hydroclean::review {

struct Response {
    int status = 200;
    json body;
};

inline int http_status(Errc c) {
    switch (c) {
        case Errc::UnknownEvent:
        case Errc::MissingFile: return 404;
        case Errc::AlreadyRepaired:
        case Errc::NotQueued:
        case Errc::InvalidTransition: return 409;
        case Errc::NoConfidentProposal:
        case Errc::NoGroundTruth: return 422;
        default: return 400;
    }
}

inline Response error_response(int status, std::string_view code, std::string_view message) {
    return {status, {{"error", std::string(code)}, {"message", std::string(message)}}};
}

inline Response error_response(const Error& e) {
    return error_response(http_status(e.code()), to_string(e.code()), e.what());
}

inline constexpr std::size_t kDefaultMaxPoints = 5000;

/// Min/max decimation: each bucket contributes its smallest and largest
/// reading, in time order, so short spikes survive downsampling.
inline std::vector<Reading> decimate(const std::vector<Reading>& rs, std::size_t max_points) {
    if (rs.size() <= max_points || max_points < 2) return rs;
    const std::size_t buckets = max_points / 2;
    const std::size_t per = (rs.size() + buckets - 1) / buckets;
    std::vector<Reading> out;
    for (std::size_t b = 0; b < rs.size(); b += per) {
        const auto first = rs.begin() + static_cast<std::ptrdiff_t>(b);
        const auto last = rs.begin() + static_cast<std::ptrdiff_t>(std::min(rs.size(), b + per));
        const auto [lo, hi] = std::minmax_element(first, last, [](const Reading& x, const Reading& y) { return x.value < y.value; });
        if (lo == hi) {
            out.push_back(*lo);
        } else if (lo->at < hi->at) {
            out.push_back(*lo);
            out.push_back(*hi);
        } else {
            out.push_back(*hi);
            out.push_back(*lo);
        }
    }
    return out;
}

class ReviewService {
public:
    /// Serves the phase-4 state with every journaled verdict replayed on top.
    ReviewService(pipeline::Store& store, PipelineConfig cfg) : store_(store), cfg_(std::move(cfg)) {
        if (store_.phase_completed() < 4)
            throw Error(Errc::PhaseOrderViolation, "review needs phase 4 completed; store is at phase " +
                                                       std::to_string(store_.phase_completed()));
        live_ = store_.load(4);
        auto verdicts = store_.verdicts();
        pipeline::phase5(live_, verdicts);
        replayed_ = verdicts.size();
        inputs_ = store_.inputs();
        billing_ = pipeline::billing_by_key(inputs_);
        months_ = detect::calendar_month_boundaries(live_.analysis_range.begin);
        committed_ = store_.phase_completed() == 4 ? live_.reports : store_.current().reports;
        routes();
    }

    Response queue() const {
        std::shared_lock lock(mutex_);
        json items = json::array();
        for (const auto& e : live_.events) {
            if (e.status != EventStatus::Queued) continue;
            json item{{"event", e}};
            if (auto p = live_.proposal(e.id)) item["proposal"] = *p;
            if (e.cls == AnomalyClass::MUI)
                item["band"] = std::string(detect::to_string(detect::classify_mui(e.score, cfg_.band())));
            if (const auto* st = live_.stream(e.key))
                item["stream"] = {{"category", st->category.main},
                                  {"sub_code", st->category.sub_code},
                                  {"unit_label", st->unit_label}};
            items.push_back(std::move(item));
        }
        return {200, items};
    }

    Response stream(const std::string& key_text, const std::optional<std::string>& from,
                    const std::optional<std::string>& to, std::size_t max_points = kDefaultMaxPoints) const {
        std::shared_lock lock(mutex_);
        CompositeKey key;
        try {
            key = CompositeKey::parse(key_text);
        } catch (const Error& e) {
            return error_response(e);
        }
        const auto* st = live_.stream(key);
        if (!st) return error_response(404, "UnknownStream", "no stream " + key_text);
        HourRange range = live_.analysis_range;
        for (auto [text, slot] : {std::pair{&from, &range.begin}, std::pair{&to, &range.end}}) {
            if (!*text) continue;
            auto h = parse_timestamp(**text);
            if (!h)
                if (auto d = parse_date(**text)) h = start_of(*d);
            if (!h) return error_response(400, "InvalidValue", "bad timestamp " + **text);
            *slot = *h;
        }
        if (range.end < range.begin) return error_response(400, "InvalidRange", "from is after to");
        const auto raw = repair::readings_in(*st, range);
        const auto points = decimate(raw, max_points);
        json billing = json::array();
        if (const auto m = live_.mapping.find(key); m != live_.mapping.end())
            if (const auto b = billing_.find(m->second.bild_key); b != billing_.end())
                for (const auto& rec : b->second) {
                    if (!rec.hours().overlaps(range)) continue;
                    billing.push_back({{"period_start", date_json(rec.period_start)},
                                       {"period_end", date_json(rec.period_end)},
                                       {"billed_litres", rec.consumption.litres},
                                       {"series_litres", st->sum_in(rec.hours()).litres}});
                }
        json events = json::array();
        for (const auto& e : live_.events)
            if (e.key == key) events.push_back(e);
        const auto profile = detect::std_profile(*st, months_);
        return {200,
                {{"key", key},
                 {"range", range},
                 {"category", st->category.main},
                 {"unit_label", st->unit_label},
                 {"std2m", profile.std2m ? json(*profile.std2m) : json(nullptr)},
                 {"points_total", raw.size()},
                 {"downsampled", points.size() != raw.size()},
                 {"points", points},
                 {"billing", billing},
                 {"events", events}}};
    }

    /// Validates, journals, then applies. The journal write comes first so an
    /// applied verdict is never lost.
    Response verdict(const std::string& body) {
        repair::Verdict v;
        try {
            v = json::parse(body).get<repair::Verdict>();
        } catch (const Error& e) {
            return error_response(400, "MalformedBody", e.what());
        } catch (const std::exception& e) {
            return error_response(400, "MalformedBody", e.what());
        }
        std::unique_lock lock(mutex_);
        auto* e = live_.event(v.event_id);
        if (!e) return error_response(404, "UnknownEvent", "no event " + std::to_string(v.event_id));
        auto* st = live_.stream(e->key);
        if (!st) return error_response(404, "UnknownEvent", "event stream is gone");
        const auto proposal = live_.proposal(e->id);
        try {
            DataStream trial_stream = *st;
            AnomalyEvent trial_event = *e;
            repair::apply_verdict(trial_stream, trial_event, v, proposal);
        } catch (const Error& err) {
            return error_response(err);
        }
        store_.append_verdict(v);
        const auto out = repair::apply_verdict(*st, *e, v, proposal);
        if (out.audit) live_.audits[e->id] = *out.audit;
        ++applied_live_;
        json resp{{"event", *e}};
        if (out.applied) resp["applied"] = *out.applied;
        return {200, resp};
    }

    Response report() const {
        std::shared_lock lock(mutex_);
        std::size_t queued = 0;
        for (const auto& e : live_.events) queued += e.status == EventStatus::Queued ? 1 : 0;
        return {200,
                {{"phase_completed", store_.phase_completed()},
                 {"reports", committed_},
                 {"queued", queued},
                 {"verdicts_replayed", replayed_},
                 {"verdicts_applied_live", applied_live_}}};
    }

    const pipeline::State& live_state() const { return live_; }

    httplib::Server& server() { return server_; }

    /// Binds and serves until stop(); returns false if binding fails.
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }
    int bind_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }

private:
    static void send(httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    void routes() {
        server_.Get("/queue", [this](const httplib::Request&, httplib::Response& res) { send(res, queue()); });
        server_.Get(R"(/stream/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto param = [&](const char* name) -> std::optional<std::string> {
                return req.has_param(name) ? std::optional(req.get_param_value(name)) : std::nullopt;
            };
            std::size_t max_points = kDefaultMaxPoints;
            if (auto m = param("max_points")) {
                try {
                    max_points = static_cast<std::size_t>(std::stoul(*m));
                } catch (const std::exception&) {
                    send(res, error_response(400, "InvalidValue", "bad max_points"));
                    return;
                }
            }
            send(res, stream(req.matches[1].str(), param("from"), param("to"), max_points));
        });
        server_.Post("/verdict", [this](const httplib::Request& req, httplib::Response& res) { send(res, verdict(req.body)); });
        server_.Get("/report", [this](const httplib::Request&, httplib::Response& res) { send(res, report()); });
        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            Response r = error_response(500, "Internal", "unexpected error");
            try {
                std::rethrow_exception(ep);
            } catch (const Error& e) {
                r = error_response(e);
            } catch (const std::exception& e) {
                r = error_response(500, "Internal", e.what());
            }
            send(res, r);
        });
    }

    pipeline::Store& store_;
    PipelineConfig cfg_;
    pipeline::State live_;
    pipeline::Inputs inputs_;
    std::map<CompositeKey, std::vector<BillingRecord>> billing_;
    std::vector<Hour> months_;
    std::vector<PhaseReport> committed_;
    std::size_t replayed_ = 0;
    std::size_t applied_live_ = 0;
    mutable std::shared_mutex mutex_;
    httplib::Server server_;
};

}  // namespace hydroclean::review
