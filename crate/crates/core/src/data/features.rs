//! Feature construction and per-stock task splitting.

use std::collections::BTreeMap;

use super::{
    Instance, MarketPanel, SplitSpec, StockTask, FIELDS_PER_POINT, PRIOR_DAYS, SAME_DAY_SLOTS,
};
use crate::error::{Error, Result};

/// Instances plus the count of candidate targets dropped because part of
/// their context window was missing.
#[derive(Debug)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
    pub skipped: usize,
}

/// Builds one instance per bar that has a full context window.
///
/// A bar `(stock, day, slot)` is a candidate when `slot >= 12` and the
/// stock has at least 20 earlier trading days. Its feature vector holds,
/// in order: the 12 preceding same-day slots (oldest first), then the same
/// slot on the 20 most recent earlier trading days (oldest first). Each
/// context point contributes `[ln volume, ln open, ln close, ln high,
/// ln low]`. Prior days come from the stock's own sorted day list, so
/// calendar gaps are fine. `y` is the ln volume of the target bar and is
/// never normalized; `v_last` is the ln volume at `slot - 1`. Candidates
/// missing any context bar are counted in `skipped`.
pub fn build_instances(panel: &MarketPanel) -> InstanceSet {
    let mut instances = Vec::new();
    let mut skipped = 0usize;
    let stocks: Vec<String> = panel.stocks().map(str::to_string).collect();
    for stock in &stocks {
        let days = panel.days(stock);
        for (di, &day) in days.iter().enumerate() {
            if di < PRIOR_DAYS {
                continue;
            }
            let prior_days = &days[di - PRIOR_DAYS..di];
            for slot in panel.slots(stock, day) {
                if (slot as usize) < SAME_DAY_SLOTS {
                    continue;
                }
                match assemble(panel, stock, day, slot, prior_days) {
                    Some((x, y, v_last)) => {
                        instances.push(Instance { stock: stock.clone(), day, slot, x, y, v_last })
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    InstanceSet { instances, skipped }
}

fn assemble(
    panel: &MarketPanel,
    stock: &str,
    day: u32,
    slot: u32,
    prior_days: &[u32],
) -> Option<(Vec<f64>, f64, f64)> {
    let mut x = Vec::with_capacity((SAME_DAY_SLOTS + PRIOR_DAYS) * FIELDS_PER_POINT);
    let mut v_last = 0.0;
    for s in (slot - SAME_DAY_SLOTS as u32)..slot {
        let bar = panel.bar(stock, day, s)?;
        push_point(&mut x, bar);
        if s == slot - 1 {
            v_last = bar.volume.ln();
        }
    }
    for &d in prior_days {
        let bar = panel.bar(stock, d, slot)?;
        push_point(&mut x, bar);
    }
    let y = panel.bar(stock, day, slot)?.volume.ln();
    Some((x, y, v_last))
}

fn push_point(x: &mut Vec<f64>, bar: &super::Bar) {
    x.push(bar.volume.ln());
    x.push(bar.open.ln());
    x.push(bar.close.ln());
    x.push(bar.high.ln());
    x.push(bar.low.ln());
}

/// Tasks grouped per stock, plus stocks excluded for having no training
/// instances.
#[derive(Debug)]
pub struct TaskSet {
    pub tasks: Vec<StockTask>,
    pub excluded: Vec<String>,
}

/// Groups instances by stock and assigns them to train/dev/test by target
/// day. Stocks with an empty training split are excluded (reported, not
/// fatal); an entirely empty result is an error.
pub fn split_tasks(instances: Vec<Instance>, spec: SplitSpec) -> Result<TaskSet> {
    let mut by_stock: BTreeMap<String, StockTask> = BTreeMap::new();
    for inst in instances {
        let task = by_stock.entry(inst.stock.clone()).or_insert_with(|| StockTask {
            stock: inst.stock.clone(),
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        });
        match spec.of_day(inst.day) {
            super::Split::Train => task.train.push(inst),
            super::Split::Dev => task.dev.push(inst),
            super::Split::Test => task.test.push(inst),
        }
    }
    let mut tasks = Vec::new();
    let mut excluded = Vec::new();
    for (stock, mut task) in by_stock {
        if task.train.is_empty() {
            excluded.push(stock);
            continue;
        }
        for split in [&mut task.train, &mut task.dev, &mut task.test] {
            split.sort_by_key(|i| (i.day, i.slot));
        }
        tasks.push(task);
    }
    if tasks.is_empty() {
        return Err(Error::data(format!(
            "no stock has training instances before day {} ({} stocks excluded)",
            spec.dev_start,
            excluded.len()
        )));
    }
    Ok(TaskSet { tasks, excluded })
}
