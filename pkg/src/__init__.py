"""小温度稀疏训练的可微结构搜索。"""
