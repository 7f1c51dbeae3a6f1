//! Daily agency-cost comparison between human-only moderation and the
//! assisted system, for the bundled preset and a custom scenario.

use hypermod::cost::{compute, CostReport, CostScenario};

pub fn run() -> hypermod::Result<(CostReport, CostReport)> {
    let preset = compute(&CostScenario::preset("paper")?)?;
    let mut bigger = CostScenario::paper();
    bigger.overhead_daily = 0.0;
    bigger.api_daily *= 4.0;
    bigger.overhead_note = None;
    Ok((preset, compute(&bigger)?))
}

fn main() -> hypermod::Result<()> {
    let (preset, custom) = run()?;
    print!("{}", preset.render());
    println!();
    println!("with 4x API spend and no overhead: system ${:.2}/day, {:.2}% cheaper", custom.system_daily, custom.daily_reduction_pct);
    Ok(())
}
