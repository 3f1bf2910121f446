#include "colearn/co_trainer.hpp"

#include <algorithm>
#include <numbers>

namespace colearn {

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::constant:
            return "constant";
        case ScheduleKind::step:
            return "step";
        case ScheduleKind::cosine:
            return "cosine";
    }
    return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
    for (auto k : {ScheduleKind::constant, ScheduleKind::step, ScheduleKind::cosine})
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown schedule '" + name + "'");
}

void LrSchedule::validate() const {
    if (!(eta0 > 0)) throw std::invalid_argument("schedule: eta0 must be > 0");
    if (kind != ScheduleKind::constant && t_max < 1) throw std::invalid_argument("schedule: t_max must be >= 1");
    if (kind == ScheduleKind::step && !(step_factor > 0)) throw std::invalid_argument("schedule: step factor must be > 0");
}

double lr_at_epoch(const LrSchedule& schedule, int t) {
    schedule.validate();
    if (t < 0 || (schedule.kind != ScheduleKind::constant && t > schedule.t_max))
        throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(t) + " outside [0, " +
                                std::to_string(schedule.t_max) + "]");
    switch (schedule.kind) {
        case ScheduleKind::constant:
            return schedule.eta0;
        case ScheduleKind::cosine:
            return 0.5 * schedule.eta0 *
                   (1.0 + std::cos(static_cast<double>(t) * std::numbers::pi / static_cast<double>(schedule.t_max)));
        case ScheduleKind::step: {
            std::vector<int> milestones = schedule.step_epochs;
            if (milestones.empty()) milestones = {schedule.t_max / 2, (3 * schedule.t_max) / 4};
            double rate = schedule.eta0;
            for (int m : milestones)
                if (t >= m) rate *= schedule.step_factor;
            return rate;
        }
    }
    return schedule.eta0;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (eval_every < 0 || snapshot_every < 0 || probe_size < 0)
        throw std::invalid_argument("train: cadences must be >= 0");
    if (threads < 1) throw std::invalid_argument("train: threads must be >= 1");
    schedule.validate();
    if (schedule.kind != ScheduleKind::constant && schedule.t_max < epochs)
        throw std::invalid_argument("train: schedule t_max is shorter than the number of epochs");
}

std::vector<Index> epoch_order(Index samples, std::uint64_t seed, int epoch, bool shuffle) {
    std::vector<Index> order(static_cast<std::size_t>(samples));
    for (Index i = 0; i < samples; ++i) order[static_cast<std::size_t>(i)] = i;
    if (shuffle) {
        Rng rng(derive_seed({seed, 0x6f72646572ULL, static_cast<std::uint64_t>(epoch)}));
        rng.shuffle(order);
    }
    return order;
}

}  // namespace colearn
