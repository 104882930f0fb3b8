"""数值核心：sn-softmax、温度调度、搜索空间与指标。"""
